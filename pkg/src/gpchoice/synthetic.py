"""Ground-truth utilities, the strong-Pareto choice oracle, and data generators.

All generators are pure functions of their seed.  Labels are produced by the
exact strong-Pareto oracle on the true utilities, so generated datasets are
Pareto-consistent by construction.  Test-suite objectives are negated once at
generation time so that "higher is better" everywhere inside the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import ChoiceDataset, ChoiceObservation, ObjectTable, validate_dataset
from .errors import (
    DomainViolationError,
    MajorityTieError,
    TieDetectedError,
    ValidationError,
)
from .kernels import KernelParams, kernel_matrix

EXAMPLE1_DOMAIN = (-4.5, 4.5)


def pareto_choice(a_utils: np.ndarray) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split rows into the strong-Pareto undominated set and its complement.

    Row v is rejected iff some row o satisfies u_i(o) >= u_i(v) for every i
    with strict inequality somewhere.  Identical rows are a caller error
    (no draws are allowed).
    """
    u = np.atleast_2d(np.asarray(a_utils, dtype=float))
    n = u.shape[0]
    ge = np.all(u[:, None, :] >= u[None, :, :], axis=2)
    gt = np.any(u[:, None, :] > u[None, :, :], axis=2)
    off_diag = ~np.eye(n, dtype=bool)
    if np.any(ge & ge.T & off_diag):
        o, v = np.argwhere(ge & ge.T & off_diag)[0]
        raise TieDetectedError(f"rows {o} and {v} have identical utilities")
    dominated = np.any(ge & gt & off_diag, axis=0)
    chosen = tuple(int(i) for i in np.flatnonzero(~dominated))
    rejected = tuple(int(i) for i in np.flatnonzero(dominated))
    return chosen, rejected


@dataclass(frozen=True)
class UtilityBank:
    """A deterministic ground-truth utility map from features to d utilities."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    d: int
    description: str

    def evaluate(self, features: np.ndarray) -> np.ndarray:
        """Utility rows for a whole feature table, shape (n, d)."""
        x = np.atleast_2d(np.asarray(features, dtype=float))
        return np.stack([np.asarray(self.evaluator(row), dtype=float) for row in x])


def example1_utility(x: np.ndarray) -> np.ndarray:
    """The smooth 1-d ground truth u(x) = [cos(2x), -sin(2x)]."""
    x0 = float(np.atleast_1d(x)[0])
    return np.array([np.cos(2.0 * x0), -np.sin(2.0 * x0)])


def example1_bank() -> UtilityBank:
    return UtilityBank(
        evaluator=example1_utility,
        d=2,
        description="u(x) = [cos(2x), -sin(2x)] on [-4.5, 4.5]",
    )


def _choice_observations(
    utilities: np.ndarray, m_sets: int, set_size: int, rng: np.random.Generator
) -> tuple[ChoiceObservation, ...]:
    """Random subsets labeled by the Pareto oracle on the given utilities."""
    n = utilities.shape[0]
    if set_size > n:
        raise ValidationError(f"set_size {set_size} exceeds n_points {n}")
    if set_size < 2:
        raise ValidationError(f"set_size must be >= 2, got {set_size}")
    observations = []
    for _ in range(m_sets):
        subset = np.sort(rng.choice(n, size=set_size, replace=False))
        chosen_local, _ = pareto_choice(utilities[subset])
        observations.append(
            ChoiceObservation(
                tuple(int(i) for i in subset),
                tuple(int(subset[j]) for j in chosen_local),
            )
        )
    return tuple(observations)


def gen_example1(
    n_points: int,
    m_sets: int,
    set_size: int,
    domain: tuple[float, float] = EXAMPLE1_DOMAIN,
    seed: int = 0,
) -> ChoiceDataset:
    """Uniform inputs on the domain, random subsets, exact Pareto labels."""
    rng = np.random.default_rng(seed)
    lo, hi = float(domain[0]), float(domain[1])
    x = rng.uniform(lo, hi, size=n_points)
    while np.unique(x).size < n_points:  # duplicates would create utility ties
        dup = n_points - np.unique(x).size
        x = np.concatenate([np.unique(x), rng.uniform(lo, hi, size=dup)])
    bank = example1_bank()
    features = x[:, None]
    utilities = bank.evaluate(features)
    observations = _choice_observations(utilities, m_sets, set_size, rng)
    return validate_dataset(ChoiceDataset(ObjectTable(features), observations))


@dataclass(frozen=True)
class KernelMixtureBank(UtilityBank):
    """Bank of kernel-basis utilities u_{z,z'}(x) = sum_j alpha_j^{zz'} k(x, x_j).

    One utility per unordered latent-state pair (z, z'), including z = z';
    the symmetry u_{z,z'} = u_{z',z} is built in by indexing unordered pairs.
    """

    anchors: np.ndarray = None
    coeffs: np.ndarray = None
    pair_columns: tuple[tuple[int, int], ...] = ()
    kernel_params: KernelParams = None

    def pair_column(self, z1: int, z2: int) -> int:
        return self.pair_columns.index((min(z1, z2), max(z1, z2)))

    def evaluate(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=float))
        return kernel_matrix(x, self.anchors, self.kernel_params) @ self.coeffs.T


def gen_kernel_mixture(
    n: int,
    c: int,
    L: int,
    kernel_params: KernelParams | None = None,
    seed: int = 0,
) -> tuple[KernelMixtureBank, np.ndarray]:
    """Draw anchors, coefficients, and uniform latent-state assignments.

    With L latent states there are L(L+1)/2 distinct utilities; for L=2 that
    is 3, the true latent dimension of the pair model.
    """
    if L < 1:
        raise ValidationError(f"L must be >= 1, got {L}")
    rng = np.random.default_rng(seed)
    if kernel_params is None:
        kernel_params = KernelParams(np.full(c, 0.3))
    anchors = rng.uniform(0.0, 1.0, size=(n, c))
    pair_columns = tuple((z1, z2) for z1 in range(L) for z2 in range(z1, L))
    coeffs = rng.normal(size=(len(pair_columns), n))
    assignment = rng.integers(0, L, size=n)
    bank = KernelMixtureBank(
        evaluator=None,
        d=len(pair_columns),
        description=f"kernel mixture, L={L}, {len(pair_columns)} distinct utilities",
        anchors=anchors,
        coeffs=coeffs,
        pair_columns=pair_columns,
        kernel_params=kernel_params,
    )
    object.__setattr__(bank, "evaluator", lambda x: bank.evaluate(x)[0])
    return bank, assignment


def sample_index_pairs(n: int, m: int, seed: int = 0) -> np.ndarray:
    """m distinct unordered index pairs drawn uniformly from the n(n-1)/2 possible."""
    total = n * (n - 1) // 2
    if m > total:
        raise ValidationError(f"asked for {m} pairs but only {total} exist")
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=m, replace=False)
    i = (0.5 * (1 + np.sqrt(8 * flat + 1))).astype(np.intp)
    j = (flat - i * (i - 1) // 2).astype(np.intp)
    return np.column_stack([j, i])


def gen_pairwise_datasets(
    bank: KernelMixtureBank,
    assignment: np.ndarray,
    pairs: np.ndarray,
    mode: str,
) -> ChoiceDataset:
    """Label index pairs with the D1 or D2 protocol.

    D1 forces a binary preference using the single utility picked by the two
    objects' latent states.  D2 keeps the full choice semantics: a singleton
    is emitted only when one object is better under every distinct utility,
    otherwise both objects are chosen (incomparable).
    """
    if mode not in ("D1", "D2"):
        raise ValidationError(f"mode must be 'D1' or 'D2', got {mode!r}")
    utilities = bank.evaluate(bank.anchors)
    assignment = np.asarray(assignment, dtype=np.intp)
    observations = []
    for i, j in np.asarray(pairs, dtype=np.intp):
        i, j = int(i), int(j)
        if mode == "D1":
            col = bank.pair_column(int(assignment[i]), int(assignment[j]))
            di, dj = utilities[i, col], utilities[j, col]
            if di == dj:
                raise TieDetectedError(f"objects {i} and {j} tie on utility {col}")
            chosen = (i,) if di > dj else (j,)
        else:
            if np.all(utilities[i] > utilities[j]):
                chosen = (i,)
            elif np.all(utilities[j] > utilities[i]):
                chosen = (j,)
            else:
                chosen = (i, j)
        observations.append(ChoiceObservation((i, j), chosen))
    return validate_dataset(
        ChoiceDataset(ObjectTable(bank.anchors), tuple(observations))
    )


def choices_to_preferences(
    choice_pairs: ChoiceDataset,
    outputs: np.ndarray,
    mode: str,
    seed: int = 0,
) -> ChoiceDataset:
    """Force binary preferences out of pair-choice data.

    Singleton choices pass through.  Incomparable pairs (both chosen) are
    resolved by a coin flip ("random") or by which object wins on more of the
    r output columns ("majority", r odd).
    """
    if mode not in ("random", "majority"):
        raise ValidationError(f"mode must be 'random' or 'majority', got {mode!r}")
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    rng = np.random.default_rng(seed)
    observations = []
    for obs in choice_pairs.observations:
        if obs.set_size != 2:
            raise ValidationError("choices_to_preferences needs |A_k| = 2 everywhere")
        if len(obs.chosen_indices) == 1:
            observations.append(obs)
            continue
        i, j = obs.set_indices
        if mode == "random":
            winner = i if rng.integers(2) == 0 else j
        else:
            wins_i = int(np.sum(outputs[i] > outputs[j]))
            wins_j = int(np.sum(outputs[j] > outputs[i]))
            if wins_i == wins_j:
                raise MajorityTieError(f"pair ({i}, {j}) splits {wins_i}:{wins_j}")
            winner = i if wins_i > wins_j else j
        observations.append(ChoiceObservation(obs.set_indices, (winner,)))
    return validate_dataset(ChoiceDataset(choice_pairs.objects, tuple(observations)))


def test_suite_utility(name: str, n_objectives: int, x: np.ndarray) -> np.ndarray:
    """Negated multi-objective test-suite value (higher = better).

    zdt1 has 2 objectives; dtlz2 has n_objectives.  Inputs live in [0,1]^c.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainViolationError(f"input outside [0,1]^c: {x}")
    if name == "zdt1":
        if n_objectives != 2:
            raise ValidationError("zdt1 has exactly 2 objectives")
        if x.size < 2:
            raise ValidationError("zdt1 needs at least 2 input variables")
        f1 = x[0]
        g = 1.0 + 9.0 * np.mean(x[1:])
        f2 = g * (1.0 - np.sqrt(f1 / g))
        return -np.array([f1, f2])
    if name == "dtlz2":
        m = int(n_objectives)
        if m < 2:
            raise ValidationError("dtlz2 needs at least 2 objectives")
        if x.size < m:
            raise ValidationError(f"dtlz2 with {m} objectives needs >= {m} inputs")
        g = float(np.sum((x[m - 1:] - 0.5) ** 2))
        theta = x[: m - 1] * (np.pi / 2.0)
        f = np.empty(m)
        for i in range(m):
            value = 1.0 + g
            value *= np.prod(np.cos(theta[: m - 1 - i]))
            if i > 0:
                value *= np.sin(theta[m - 1 - i])
            f[i] = value
        return -f
    raise ValidationError(f"unknown test-suite function {name!r}")


def test_suite_bank(name: str, n_objectives: int) -> UtilityBank:
    return UtilityBank(
        evaluator=lambda x: test_suite_utility(name, n_objectives, x),
        d=2 if name == "zdt1" else int(n_objectives),
        description=f"negated {name} objectives",
    )


def gen_bank_dataset(
    bank: UtilityBank,
    n_points: int,
    m_sets: int,
    set_size: int,
    c: int,
    seed: int = 0,
) -> ChoiceDataset:
    """Uniform [0,1]^c inputs labeled via the Pareto oracle on a utility bank."""
    rng = np.random.default_rng(seed)
    features = rng.uniform(0.0, 1.0, size=(n_points, c))
    utilities = bank.evaluate(features)
    observations = _choice_observations(utilities, m_sets, set_size, rng)
    return validate_dataset(ChoiceDataset(ObjectTable(features), observations))


def outputs_to_choice_pairs(
    features: np.ndarray, outputs: np.ndarray, pairs: np.ndarray | None = None
) -> ChoiceDataset:
    """Dense (or given) pair-choice data from a multi-output table.

    Object i alone is chosen over j iff it is strictly better on every
    output column; conflicting columns make the pair incomparable (both
    chosen).  This is the protocol used to turn benchmark tables with r
    output variables into choice data.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    n = features.shape[0]
    if outputs.shape[0] != n:
        raise ValidationError("features and outputs disagree on object count")
    if pairs is None:
        pairs = np.array([(i, j) for i in range(n) for j in range(i + 1, n)], dtype=np.intp)
    observations = []
    for i, j in np.asarray(pairs, dtype=np.intp):
        i, j = int(i), int(j)
        if np.all(outputs[i] > outputs[j]):
            chosen = (i,)
        elif np.all(outputs[j] > outputs[i]):
            chosen = (j,)
        else:
            chosen = (i, j)
        observations.append(ChoiceObservation((i, j), chosen))
    return validate_dataset(ChoiceDataset(ObjectTable(features), tuple(observations)))
