"""Predictive distribution at test objects and Monte-Carlo choice inference.

Per latent dimension the predictive at X* conditions the GP prior on the
variational posterior at the training inputs:

    mean_i = K*' alpha_i,    cov_i = K** - K*' (K + diag(site_prec_i)^{-1})^{-1} K*.

Choice probabilities integrate the choice likelihood over this Gaussian by
Monte Carlo with joint samples across test points (dominance comparisons are
between objects, so marginal sampling would distort them).  Two semantics are
exposed: "relaxed" averages the sigma-smoothed likelihood itself, while
"indicator" is the sigma->0 limit where every sampled utility votes for
exactly one subset — its strong-Pareto undominated set — so subset
probabilities partition the sample space.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .data import ChoiceObservation
from .errors import FactorizationError, ValidationError
from .kernels import MAX_JITTER, kernel_matrix
from .likelihood import log_lik_observation
from .model import S_JITTER, FittedModel
from .synthetic import pareto_choice

EXACT_MODE_LIMIT = 12
DEFAULT_SAMPLES = 1000


@dataclass(frozen=True)
class PredictiveGaussian:
    """Joint Gaussian over utilities at p test inputs, one block per dimension."""

    means: np.ndarray   # (d, p)
    covs: np.ndarray    # (d, p, p), symmetric PSD

    @property
    def n_points(self) -> int:
        return self.means.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.means.shape[0]

    @property
    def mean_matrix(self) -> np.ndarray:
        """Utilities-by-object orientation (p, d)."""
        return self.means.T

    def variances(self) -> np.ndarray:
        """Per-point marginal variances, (d, p)."""
        return np.stack([np.diag(self.covs[i]) for i in range(self.latent_dim)])


def _chol_psd(matrix: np.ndarray, initial_jitter: float = S_JITTER) -> np.ndarray:
    jitter = initial_jitter
    eye = np.eye(matrix.shape[0])
    while jitter <= MAX_JITTER:
        try:
            return np.linalg.cholesky(matrix + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(
        f"predictive covariance not factorizable up to jitter {MAX_JITTER}")


def predict_latent(model: FittedModel, x_star: np.ndarray) -> PredictiveGaussian:
    """Gaussian predictive over u(X*) for each latent dimension."""
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    if not np.all(np.isfinite(x_star)):
        raise ValidationError("test inputs must be finite")
    if x_star.shape[1] != model.objects.n_features:
        raise ValidationError(
            f"test inputs have {x_star.shape[1]} features, "
            f"model expects {model.objects.n_features}")
    x_train = model.objects.features
    p = x_star.shape[0]
    # The fitted prior covariance is k(x, x') + jitter * 1[x == x'] (the Gram
    # jitter is part of the trained model), so coincident rows carry the
    # jitter term in the cross and test blocks as well.
    same_cross = np.all(x_train[:, None, :] == x_star[None, :, :], axis=-1)
    same_test = np.all(x_star[:, None, :] == x_star[None, :, :], axis=-1)
    means = np.empty((model.latent_dim, p))
    covs = np.empty((model.latent_dim, p, p))
    for i in range(model.latent_dim):
        params = model.kernel_params(i)
        k_cross = kernel_matrix(x_train, x_star, params) + model.jitter * same_cross
        k_test = kernel_matrix(x_star, x_star, params) + model.jitter * same_test
        means[i] = k_cross.T @ model.alpha[i]
        cov = k_test - k_cross.T @ (model.moments[i].t_mat @ k_cross)
        covs[i] = 0.5 * (cov + cov.T)
    return PredictiveGaussian(means=means, covs=covs)


def sample_latent(pg: PredictiveGaussian, n_samples: int, seed: int) -> np.ndarray:
    """Joint utility samples, shape (n_samples, p, d); deterministic given seed."""
    if n_samples < 1:
        raise ValidationError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    d, p = pg.means.shape
    xi = rng.standard_normal((d, p, n_samples))
    out = np.empty((n_samples, p, d))
    for i in range(d):
        chol = _chol_psd(pg.covs[i])
        out[:, :, i] = (pg.means[i][:, None] + chol @ xi[i]).T
    return out


def _check_subset(a_star, c_star) -> tuple[tuple[int, ...], tuple[int, ...]]:
    a = tuple(int(i) for i in a_star)
    c = tuple(int(i) for i in c_star)
    if not c:
        raise ValidationError("the chosen subset must be non-empty")
    if not set(c) <= set(a):
        raise ValidationError("chosen indices must be a subset of the query set")
    return a, c


def choice_probability(
    model: FittedModel,
    x_star: np.ndarray,
    a_star,
    c_star,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    semantics: str = "indicator",
) -> float:
    """Posterior probability that exactly C* is chosen from A*.

    semantics="indicator": fraction of joint utility samples whose
    strong-Pareto undominated subset of A* equals C* exactly.
    semantics="relaxed": Monte-Carlo average of the sigma-smoothed choice
    likelihood at the fitted sigma.
    """
    a, c = _check_subset(a_star, c_star)
    if semantics not in ("indicator", "relaxed"):
        raise ValidationError(f"unknown probability semantics {semantics!r}")
    pg = predict_latent(model, x_star)
    samples = sample_latent(pg, n_samples, seed)
    if semantics == "indicator":
        target = tuple(sorted(c))
        hits = 0
        for s in range(n_samples):
            chosen, _ = pareto_choice(samples[s][list(a)])
            if tuple(sorted(a[j] for j in chosen)) == target:
                hits += 1
        return hits / n_samples
    obs = ChoiceObservation(a, c)
    vals = [
        np.exp(log_lik_observation(obs, samples[s], model.sigma))
        for s in range(n_samples)
    ]
    return float(np.mean(vals))


def predict_choice_set(
    model: FittedModel,
    x_star: np.ndarray,
    a_star,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    mode: str = "marginal",
) -> tuple[int, ...]:
    """Predicted chosen subset of A* (indices into x_star rows).

    mode="exact" (|A*| <= 12): every sample votes for its Pareto-undominated
    subset; the modal subset wins (ties broken by size, then lexicographic).
    mode="marginal": objects whose per-sample undominated frequency is >= 0.5;
    falls back to the single highest-frequency object if none qualify.
    """
    a = _check_query_set(a_star)
    if mode not in ("exact", "marginal"):
        raise ValidationError(f"unknown prediction mode {mode!r}")
    if mode == "exact" and len(a) > EXACT_MODE_LIMIT:
        raise ValidationError(
            f"exact mode enumerates subsets only up to |A*| = {EXACT_MODE_LIMIT}")
    pg = predict_latent(model, x_star)
    samples = sample_latent(pg, n_samples, seed)
    rows = list(a)

    if mode == "exact":
        order = []
        index_of = {}
        for r in range(1, len(a) + 1):
            for comb in combinations(range(len(a)), r):
                index_of[comb] = len(order)
                order.append(comb)
        votes = np.zeros(len(order), dtype=int)
        for s in range(n_samples):
            chosen, _ = pareto_choice(samples[s][rows])
            votes[index_of[tuple(sorted(chosen))]] += 1
        winner = order[int(np.argmax(votes))]
        return tuple(sorted(a[j] for j in winner))

    counts = np.zeros(len(a), dtype=int)
    for s in range(n_samples):
        chosen, _ = pareto_choice(samples[s][rows])
        counts[list(chosen)] += 1
    freq = counts / n_samples
    picked = [a[j] for j in range(len(a)) if freq[j] >= 0.5]
    if not picked:
        picked = [a[int(np.argmax(freq))]]
    return tuple(sorted(picked))


def _check_query_set(a_star) -> tuple[int, ...]:
    a = tuple(int(i) for i in a_star)
    if len(a) < 2:
        raise ValidationError("the query set needs at least two objects")
    if len(set(a)) != len(a):
        raise ValidationError("query set contains duplicate indices")
    return a


def per_object_choice_probabilities(
    model: FittedModel,
    x_star: np.ndarray,
    a_star,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> np.ndarray:
    """Per-object probability of being in the chosen subset of A*.

    Entry j is the fraction of joint utility samples in which object
    a_star[j] lies in the strong-Pareto undominated subset of A*.  Uses
    the same sample stream as `predict_choice_set` at equal seed.
    """
    a = _check_query_set(a_star)
    pg = predict_latent(model, x_star)
    samples = sample_latent(pg, n_samples, seed)
    rows = list(a)
    counts = np.zeros(len(a), dtype=int)
    for s in range(n_samples):
        chosen, _ = pareto_choice(samples[s][rows])
        counts[list(chosen)] += 1
    return counts / n_samples


def subset_probabilities(
    model: FittedModel,
    x_star: np.ndarray,
    a_star,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> tuple[tuple[tuple[int, ...], float], ...]:
    """Probability of every non-empty subset of A* being the chosen set.

    Returns (subset, probability) pairs in canonical order (by size, then
    lexicographic); the probabilities sum to 1 because each sample votes
    for exactly one subset.  Limited to |A*| <= 12.
    """
    a = _check_query_set(a_star)
    if len(a) > EXACT_MODE_LIMIT:
        raise ValidationError(
            f"subset probabilities enumerate subsets only up to |A*| = {EXACT_MODE_LIMIT}")
    pg = predict_latent(model, x_star)
    samples = sample_latent(pg, n_samples, seed)
    rows = list(a)
    order = []
    index_of = {}
    for r in range(1, len(a) + 1):
        for comb in combinations(range(len(a)), r):
            index_of[comb] = len(order)
            order.append(comb)
    votes = np.zeros(len(order), dtype=int)
    for s in range(n_samples):
        chosen, _ = pareto_choice(samples[s][rows])
        votes[index_of[tuple(sorted(chosen))]] += 1
    return tuple(
        (tuple(a[j] for j in comb), votes[i] / n_samples)
        for i, comb in enumerate(order)
    )
