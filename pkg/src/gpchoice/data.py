"""Core data types: object tables, choice observations, and the pair encoding.

A choice dataset is a table of t objects with c features plus m observations.
Each observation k presents a set A_k of object indices and records the subset
C_k that was chosen; the rejected set is R_k = A_k \\ C_k.  The likelihood
works on two flattened views of the data, built once by :func:`encode_pairs`:

* incomparability pairs: every unordered pair {o, v} drawn from C_k,
* rejection groups: one group per rejected object v in R_k, holding the
  (o, v) entries for every chosen o in C_k.

All indices are 0-based.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateObjectError,
    EmptyChoiceSetError,
    IndexOutOfRangeError,
    SchemaError,
    ValidationError,
)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ObjectTable:
    """The t objects under study, one row of c features each."""

    features: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim != 2:
            raise ValidationError(f"features must be 2-d, got shape {x.shape}")
        if x.shape[0] < 2 or x.shape[1] < 1:
            raise ValidationError(
                f"need at least 2 objects and 1 feature, got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ValidationError("features contain non-finite values")
        if np.unique(x, axis=0).shape[0] < x.shape[0]:
            raise DuplicateObjectError(
                "two objects have identical feature rows (no draws are allowed)"
            )
        object.__setattr__(self, "features", _readonly(x))

    @property
    def n_objects(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.n_objects)


@dataclass(frozen=True)
class ChoiceObservation:
    """One presented set A and its chosen subset C (both index tuples)."""

    set_indices: tuple[int, ...]
    chosen_indices: tuple[int, ...]

    def __post_init__(self):
        a = tuple(int(i) for i in self.set_indices)
        c = tuple(int(i) for i in self.chosen_indices)
        object.__setattr__(self, "set_indices", a)
        object.__setattr__(self, "chosen_indices", c)
        if len(c) == 0:
            raise EmptyChoiceSetError("chosen set is empty")
        if len(a) < 2:
            raise ValidationError(f"choice set needs at least 2 objects, got {len(a)}")
        if len(set(a)) != len(a):
            raise DuplicateObjectError(f"duplicate object index in set {a}")
        if len(set(c)) != len(c):
            raise DuplicateObjectError(f"duplicate object index in chosen {c}")
        if not set(c) <= set(a):
            raise ValidationError(f"chosen {c} is not a subset of the presented set {a}")
        if any(i < 0 for i in a):
            raise IndexOutOfRangeError(f"negative object index in {a}")

    @property
    def rejected_indices(self) -> tuple[int, ...]:
        chosen = set(self.chosen_indices)
        return tuple(i for i in self.set_indices if i not in chosen)

    @property
    def set_size(self) -> int:
        return len(self.set_indices)


@dataclass(frozen=True)
class ChoiceDataset:
    """An object table plus m >= 1 choice observations over it."""

    objects: ObjectTable
    observations: tuple[ChoiceObservation, ...]

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))

    @property
    def n_objects(self) -> int:
        return self.objects.n_objects

    @property
    def n_observations(self) -> int:
        return len(self.observations)


def validate_dataset(dataset: ChoiceDataset) -> ChoiceDataset:
    """Check cross-cutting invariants and return the dataset unchanged.

    Per-observation invariants (non-empty C, C subset of A, |A| >= 2, no
    duplicates) are enforced at construction; this adds the table-level
    checks: at least one observation and all indices within range.
    Identical repeated observations are allowed; the likelihood treats
    conflicts softly.
    """
    if dataset.n_observations < 1:
        raise ValidationError("dataset has no observations")
    t = dataset.n_objects
    for k, obs in enumerate(dataset.observations):
        for i in obs.set_indices:
            if i >= t:
                raise IndexOutOfRangeError(
                    f"observation {k} references object {i} but the table has {t} objects"
                )
    return dataset


@dataclass(frozen=True)
class PairEncoding:
    """Flattened index arrays driving the vectorized likelihood.

    Attributes
    ----------
    pairs : (P, 2) int array
        Object index pairs {o, v} in C_k x C_k, enumerated per observation.
    pair_ptr : (m+1,) int array
        Observation k owns pairs[pair_ptr[k]:pair_ptr[k+1]].
    group_rejected : (G,) int array
        The rejected object of each rejection group; one group per (k, v).
    group_ptr : (m+1,) int array
        Observation k owns groups group_ptr[k]:group_ptr[k+1].
    ent_chosen, ent_rejected : (E,) int arrays
        Flattened (o, v) entries, stored contiguously group by group.
    ent_ptr : (G+1,) int array
        Group g owns entries ent_ptr[g]:ent_ptr[g+1]; never empty.
    """

    n_obs: int
    pairs: np.ndarray
    pair_ptr: np.ndarray
    group_rejected: np.ndarray
    group_ptr: np.ndarray
    ent_chosen: np.ndarray
    ent_rejected: np.ndarray
    ent_ptr: np.ndarray
    pair_obs: np.ndarray = field(repr=False, default=None)
    ent_group: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for name in ("pairs", "pair_ptr", "group_rejected", "group_ptr",
                     "ent_chosen", "ent_rejected", "ent_ptr"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=np.intp)))
        # Derived lookup arrays: observation of each pair, group of each entry.
        pair_obs = np.repeat(np.arange(self.n_obs), np.diff(self.pair_ptr))
        ent_group = np.repeat(np.arange(len(self.group_rejected)), np.diff(self.ent_ptr))
        object.__setattr__(self, "pair_obs", _readonly(pair_obs))
        object.__setattr__(self, "ent_group", _readonly(ent_group))

    @property
    def n_pairs(self) -> int:
        return self.pairs.shape[0]

    @property
    def n_groups(self) -> int:
        return self.group_rejected.shape[0]

    @property
    def n_entries(self) -> int:
        return self.ent_chosen.shape[0]


def encode_pairs(dataset: ChoiceDataset) -> PairEncoding:
    """Build the flattened pair/group views of a validated dataset.

    Counting identities: n_pairs == sum_k |C_k| choose 2 and
    n_groups == sum_k |R_k|.  Rejection groups are ragged; no worst-object
    padding is materialized (a padded factor would contribute 0 in log space).
    """
    validate_dataset(dataset)
    pairs = []
    pair_ptr = [0]
    group_rejected = []
    group_ptr = [0]
    ent_chosen = []
    ent_rejected = []
    ent_ptr = [0]
    for obs in dataset.observations:
        chosen = obs.chosen_indices
        for o, v in itertools.combinations(chosen, 2):
            pairs.append((o, v))
        pair_ptr.append(len(pairs))
        for v in obs.rejected_indices:
            group_rejected.append(v)
            for o in chosen:
                ent_chosen.append(o)
                ent_rejected.append(v)
            ent_ptr.append(len(ent_chosen))
        group_ptr.append(len(group_rejected))
    return PairEncoding(
        n_obs=dataset.n_observations,
        pairs=np.asarray(pairs, dtype=np.intp).reshape(-1, 2),
        pair_ptr=np.asarray(pair_ptr, dtype=np.intp),
        group_rejected=np.asarray(group_rejected, dtype=np.intp),
        group_ptr=np.asarray(group_ptr, dtype=np.intp),
        ent_chosen=np.asarray(ent_chosen, dtype=np.intp),
        ent_rejected=np.asarray(ent_rejected, dtype=np.intp),
        ent_ptr=np.asarray(ent_ptr, dtype=np.intp),
    )


def decode_pairs(encoding: PairEncoding) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Reconstruct (C_k, R_k) per observation from an encoding.

    Inverse of :func:`encode_pairs` up to the original index order; used by
    the round-trip tests.
    """
    out = []
    for k in range(encoding.n_obs):
        g0, g1 = encoding.group_ptr[k], encoding.group_ptr[k + 1]
        rejected = tuple(int(v) for v in encoding.group_rejected[g0:g1])
        if g1 > g0:
            e0, e1 = encoding.ent_ptr[g0], encoding.ent_ptr[g0 + 1]
            chosen = tuple(int(o) for o in encoding.ent_chosen[e0:e1])
        else:
            # Everything was chosen; recover C from the pair enumeration.
            p0, p1 = encoding.pair_ptr[k], encoding.pair_ptr[k + 1]
            seen: dict[int, None] = {}
            for o, v in encoding.pairs[p0:p1]:
                seen.setdefault(int(o))
                seen.setdefault(int(v))
            chosen = tuple(seen)
        out.append((chosen, rejected))
    return out


def dataset_to_dict(dataset: ChoiceDataset) -> dict:
    return {
        "features": dataset.objects.features.tolist(),
        "observations": [
            {"set": list(obs.set_indices), "chosen": list(obs.chosen_indices)}
            for obs in dataset.observations
        ],
    }


def dataset_from_dict(payload: dict) -> ChoiceDataset:
    if not isinstance(payload, dict):
        raise SchemaError("dataset payload must be a JSON object")
    for key in ("features", "observations"):
        if key not in payload:
            raise SchemaError(f"dataset payload is missing the '{key}' key")
    try:
        table = ObjectTable(np.asarray(payload["features"], dtype=float))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad feature matrix: {exc}") from None
    observations = []
    for k, row in enumerate(payload["observations"]):
        if not isinstance(row, dict) or "set" not in row or "chosen" not in row:
            raise SchemaError(f"observation {k} must be an object with 'set' and 'chosen'")
        observations.append(ChoiceObservation(tuple(row["set"]), tuple(row["chosen"])))
    return validate_dataset(ChoiceDataset(table, tuple(observations)))


def save_dataset(dataset: ChoiceDataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_dict(dataset), fh, indent=1)
        fh.write("\n")


def load_dataset(path: str) -> ChoiceDataset:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path} is not valid JSON: {exc}") from None
    return dataset_from_dict(payload)
