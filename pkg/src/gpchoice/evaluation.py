"""Evaluation metrics and experiment protocol helpers.

Predicted choice sets are scored against ground truth at the level of
individual objects (balanced accuracy / A-mean) or whole binary pairs
(three-way pair accuracy).  `split_dataset` implements the
observation-level train/test splits used by the cross-validation and
sparsity protocols.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .data import ChoiceDataset, ChoiceObservation
from .errors import (
    ConfigError,
    NoNegativesError,
    NoPositivesError,
    ValidationError,
)

__all__ = [
    "EvalReport",
    "a_mean",
    "pairwise_accuracy",
    "split_dataset",
    "aggregate_reports",
]


@dataclass(frozen=True)
class EvalReport:
    """Object-level classification metrics for predicted choice sets.

    The positive class is "chosen": ``tpr`` is the fraction of truly
    chosen objects predicted chosen, ``tnr`` the fraction of truly
    rejected objects predicted rejected, and ``a_mean`` their arithmetic
    mean (balanced accuracy).  ``per_seed`` optionally carries a
    breakdown over repetitions as ``(label, a_mean, accuracy)`` rows.
    """

    tp: int
    tn: int
    fp: int
    fn: int
    per_seed: tuple[tuple[str, float, float], ...] = field(default=())

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValidationError(f"count {name} must be nonnegative")

    @property
    def n_objects(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn)

    @property
    def tnr(self) -> float:
        return self.tn / (self.tn + self.fp)

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n_objects

    @property
    def a_mean(self) -> float:
        return 0.5 * (self.tpr + self.tnr)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "tn": self.tn,
            "fp": self.fp,
            "fn": self.fn,
            "tpr": self.tpr,
            "tnr": self.tnr,
            "accuracy": self.accuracy,
            "a_mean": self.a_mean,
            "per_seed": [list(row) for row in self.per_seed],
        }


def _chosen_indices(prediction, observation: ChoiceObservation) -> frozenset[int]:
    """Normalize one prediction to a set of chosen object indices."""
    if isinstance(prediction, ChoiceObservation):
        if prediction.set_indices != observation.set_indices:
            raise ValidationError(
                "predicted observation is over a different choice set "
                f"{prediction.set_indices} than the ground truth "
                f"{observation.set_indices}"
            )
        return frozenset(prediction.chosen_indices)
    chosen = frozenset(int(i) for i in prediction)
    extra = chosen - frozenset(observation.set_indices)
    if extra:
        raise ValidationError(
            f"predicted chosen indices {sorted(extra)} are not in the "
            f"choice set {observation.set_indices}"
        )
    return chosen


def a_mean(
    predicted: Sequence[Iterable[int] | ChoiceObservation],
    true: Sequence[ChoiceObservation],
) -> EvalReport:
    """Score predicted chosen subsets against ground-truth observations.

    Each object of each test observation is classified as chosen or
    rejected by both the prediction and the truth; counts are pooled
    over observations.  Raises ``NoPositivesError`` /
    ``NoNegativesError`` when the test set has no chosen / no rejected
    objects, since the corresponding rate is undefined.
    """
    if len(predicted) != len(true):
        raise ValidationError(
            f"{len(predicted)} predictions for {len(true)} observations"
        )
    if not true:
        raise ValidationError("empty test set")
    tp = tn = fp = fn = 0
    for pred, obs in zip(predicted, true):
        chosen = _chosen_indices(pred, obs)
        for idx in obs.chosen_indices:
            if idx in chosen:
                tp += 1
            else:
                fn += 1
        for idx in obs.rejected_indices:
            if idx in chosen:
                fp += 1
            else:
                tn += 1
    if tp + fn == 0:
        raise NoPositivesError("test set contains no chosen objects")
    if tn + fp == 0:
        raise NoNegativesError("test set contains no rejected objects")
    return EvalReport(tp=tp, tn=tn, fp=fp, fn=fn)


def pairwise_accuracy(
    predicted: Sequence[Iterable[int] | ChoiceObservation],
    true: Sequence[ChoiceObservation],
) -> float:
    """Three-way accuracy on binary choice sets.

    The outcome of a pair is the chosen subset itself: first wins,
    second wins, or both chosen (incomparable).  A prediction is
    correct only when it matches the true subset exactly.
    """
    if len(predicted) != len(true):
        raise ValidationError(
            f"{len(predicted)} predictions for {len(true)} observations"
        )
    if not true:
        raise ValidationError("empty test set")
    hits = 0
    for pred, obs in zip(predicted, true):
        if obs.set_size != 2:
            raise ValidationError(
                f"pairwise accuracy needs binary choice sets, got size {obs.set_size}"
            )
        chosen = _chosen_indices(pred, obs)
        if not chosen:
            raise ValidationError("predicted chosen set is empty")
        hits += chosen == frozenset(obs.chosen_indices)
    return hits / len(true)


def split_dataset(
    dataset: ChoiceDataset,
    train_fraction: float | None = None,
    sparsity_level: float | None = None,
    seed: int = 0,
) -> tuple[ChoiceDataset, ChoiceDataset]:
    """Split observations into train/test at random; objects are shared.

    Exactly one of ``train_fraction`` and ``sparsity_level`` must be
    given; both denote the fraction of observations assigned to
    training (the sparsity protocol simply uses the remainder as test).
    The split is deterministic per seed, observation counts round to
    the nearest integer, and both halves are always non-empty.
    """
    if (train_fraction is None) == (sparsity_level is None):
        raise ConfigError("give exactly one of train_fraction, sparsity_level")
    fraction = train_fraction if train_fraction is not None else sparsity_level
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    m = dataset.n_observations
    if m < 2:
        raise ValidationError("need at least two observations to split")
    n_train = int(round(fraction * m))
    n_train = max(1, min(m - 1, n_train))
    perm = np.random.default_rng(seed).permutation(m)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    train = ChoiceDataset(
        dataset.objects, tuple(dataset.observations[i] for i in train_idx)
    )
    test = ChoiceDataset(
        dataset.objects, tuple(dataset.observations[i] for i in test_idx)
    )
    return train, test


def aggregate_reports(
    reports: Sequence[EvalReport],
    labels: Sequence[str] | None = None,
) -> EvalReport:
    """Pool counts over repetitions and record a per-run breakdown."""
    if not reports:
        raise ValidationError("no reports to aggregate")
    if labels is None:
        labels = [str(i) for i in range(len(reports))]
    if len(labels) != len(reports):
        raise ValidationError(
            f"{len(labels)} labels for {len(reports)} reports"
        )
    per_seed = tuple(
        (str(label), rep.a_mean, rep.accuracy)
        for label, rep in zip(labels, reports)
    )
    return EvalReport(
        tp=sum(r.tp for r in reports),
        tn=sum(r.tn for r in reports),
        fp=sum(r.fp for r in reports),
        fn=sum(r.fn for r in reports),
        per_seed=per_seed,
    )
