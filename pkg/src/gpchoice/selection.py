"""Leave-one-out predictive fit via Pareto-smoothed importance sampling,
and forward selection of the latent dimension.

For each held-out observation z_k the LOO predictive density is estimated
from posterior utility samples u^(s) with importance weights
w_k^(s) = 1 / p(z_k | u^(s)):

    p(z_k | z_-k)  ~=  sum_s w~_k^(s) p(z_k | u^(s)) / sum_s w~_k^(s),

where w~ are the raw weights with their largest-M tail replaced by quantiles
of a generalized Pareto distribution fitted to the tail exceedances
(Vehtari, Gelman & Gabry, 2017), truncated at the raw maximum.  All weight
arithmetic happens in log space (weights are shifted by their maximum before
exponentiation).  The GPD shape is estimated by the Zhang & Stephens (2009)
profile posterior-mean method with the standard weak prior pulling k toward
0.5.  phi = sum_k elpd_k is the model-comparison score; the latent dimension
is chosen by scanning d = 1..d_max and taking the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import ChoiceDataset, encode_pairs, validate_dataset
from .errors import (
    DegenerateWeightsError,
    GPChoiceError,
    InsufficientTailError,
    ValidationError,
)
from .inference import FitConfig, fit
from .likelihood import per_observation_log_lik
from .model import FittedModel

KHAT_RELIABLE_MAX = 0.7
WEIGHT_TOL = 1e-12
_PRIOR_PULL = 10.0  # pseudo-observations pulling khat toward 0.5
_SAMPLE_CHUNK = 256


@dataclass(frozen=True)
class LooResult:
    """PSIS-LOO estimate with per-observation decomposition and diagnostics."""

    phi: float
    elpd: np.ndarray                 # (m,) per-observation log predictive
    khat: np.ndarray                 # (m,) GPD shape diagnostics (0 where skipped)
    n_posterior_samples: int
    unreliable: bool                 # any khat > 0.7
    degenerate_obs: np.ndarray       # (m,) bool: constant weights, smoothing skipped

    @property
    def n_observations(self) -> int:
        return self.elpd.shape[0]

    @property
    def max_khat(self) -> float:
        return float(np.max(self.khat)) if self.khat.size else 0.0

    @property
    def n_bad_khat(self) -> int:
        return int(np.sum(self.khat > KHAT_RELIABLE_MAX))


def tail_size(n_samples: int) -> int:
    """Tail length for GPD smoothing: min(ceil(0.2 S), ceil(3 sqrt(S)))."""
    return int(min(np.ceil(0.2 * n_samples), np.ceil(3.0 * np.sqrt(n_samples))))


def _gpd_quantile(p: np.ndarray, k: float, sigma: float) -> np.ndarray:
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma / k * (np.power(1.0 - p, -k) - 1.0)


def fit_gpd_tail(weights: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Fit a generalized Pareto to the largest-M weights and smooth them.

    Returns (khat, sigma_gpd, smoothed) where ``smoothed`` holds the M tail
    values in ascending order: GPD quantiles at the expected order-statistic
    probabilities (z - 0.5)/M above the cut point, truncated at the raw
    maximum.  khat carries the weak-prior regularization toward 0.5.
    """
    w = np.sort(np.asarray(weights, dtype=float))
    s = w.size
    if np.ptp(w) < WEIGHT_TOL:
        raise DegenerateWeightsError(
            "all importance weights equal within 1e-12; nothing to smooth")
    m = tail_size(s)
    if m < 5:
        raise InsufficientTailError(
            f"tail of {m} samples is too short to fit (need at least 5)")
    cut = w[s - m - 1]
    exceed = w[s - m:] - cut
    if np.ptp(exceed) < WEIGHT_TOL:
        raise DegenerateWeightsError(
            "tail weights equal within 1e-12; nothing to smooth")

    # Zhang & Stephens (2009): profile posterior mean over a theta grid.
    n = exceed.size
    x_quart = exceed[int(n / 4 + 0.5) - 1]
    if x_quart <= 0.0:  # ties at the cut point; use the smallest positive gap
        x_quart = exceed[exceed > 0.0][0]
    x_max = exceed[-1]
    grid = 30 + int(np.sqrt(n))
    j = np.arange(1, grid + 1)
    theta = 1.0 / x_max + (1.0 - np.sqrt(grid / (j - 0.5))) / (3.0 * x_quart)
    k_j = -np.mean(np.log1p(-theta[:, None] * exceed[None, :]), axis=1)
    log_lik_j = n * (np.log(theta / k_j) + k_j - 1.0)
    rel = np.exp(log_lik_j - logsumexp(log_lik_j))
    theta_hat = float(np.sum(rel * theta))
    # Shape in the xi convention (positive = heavy tail): theta_hat < 0 there.
    khat = float(np.mean(np.log1p(-theta_hat * exceed)))
    sigma = -khat / theta_hat
    khat = (n * khat + _PRIOR_PULL * 0.5) / (n + _PRIOR_PULL)

    probs = (np.arange(1, m + 1) - 0.5) / m
    smoothed = cut + _gpd_quantile(probs, khat, sigma)
    smoothed = np.minimum(smoothed, w[-1])
    return khat, sigma, smoothed


def psis_loo(
    model: FittedModel,
    dataset: ChoiceDataset,
    n_samples: int = 4000,
    seed: int = 0,
) -> LooResult:
    """PSIS-LOO predictive fit of the model on its training observations.

    Weight vectors that are constant within 1e-12 (e.g. a near-deterministic
    posterior) skip smoothing and are flagged in ``degenerate_obs``.
    """
    validate_dataset(dataset)
    if n_samples < 2:
        raise ValidationError("n_samples must be at least 2")
    enc = encode_pairs(dataset)
    m = dataset.n_observations

    ll = np.empty((n_samples, m))
    for start in range(0, n_samples, _SAMPLE_CHUNK):
        stop = min(start + _SAMPLE_CHUNK, n_samples)
        u = model.sample_posterior(stop - start, seed=seed + start)
        ll[start:stop] = per_observation_log_lik(enc, u, model.sigma)

    elpd = np.empty(m)
    khat = np.zeros(m)
    degenerate = np.zeros(m, dtype=bool)
    for k in range(m):
        lw = -ll[:, k]
        lw_shifted = lw - np.max(lw)
        w = np.exp(lw_shifted)
        try:
            k_hat, _, smoothed = fit_gpd_tail(w)
            order = np.argsort(w)
            tail_idx = order[-smoothed.size:]
            log_w = lw_shifted.copy()
            log_w[tail_idx] = np.log(smoothed)
            khat[k] = k_hat
        except DegenerateWeightsError:
            degenerate[k] = True
            log_w = lw_shifted
        elpd[k] = logsumexp(log_w + ll[:, k]) - logsumexp(log_w)

    phi = float(np.sum(elpd))
    return LooResult(
        phi=phi,
        elpd=elpd,
        khat=khat,
        n_posterior_samples=n_samples,
        unreliable=bool(np.any(khat > KHAT_RELIABLE_MAX)),
        degenerate_obs=degenerate,
    )


@dataclass(frozen=True)
class DimensionRow:
    """One line of the phi-vs-d selection table."""

    d: int
    phi: float            # nan when the fit failed
    max_khat: float
    n_bad_khat: int
    failed: bool = False
    error: str = ""


def select_latent_dim(
    dataset: ChoiceDataset,
    d_max: int,
    config: FitConfig | None = None,
    loo_samples: int = 4000,
    early_stop: bool = False,
) -> tuple[int, list[DimensionRow], dict[int, FittedModel]]:
    """Scan d = 1..d_max, fit each, score by PSIS-LOO phi, return the argmax.

    A dimension whose fit raises is recorded as failed and skipped.  With
    early_stop=True the scan halts after the first strict decrease in phi.
    """
    if d_max < 1:
        raise ValidationError("d_max must be at least 1")
    if config is None:
        config = FitConfig()
    validate_dataset(dataset)
    rows: list[DimensionRow] = []
    models: dict[int, FittedModel] = {}
    for d in range(1, d_max + 1):
        try:
            model, _ = fit(dataset, d, config)
            loo = psis_loo(model, dataset, n_samples=loo_samples, seed=config.seed)
        except GPChoiceError as exc:
            rows.append(DimensionRow(d=d, phi=float("nan"), max_khat=float("nan"),
                                     n_bad_khat=0, failed=True, error=str(exc)))
            continue
        models[d] = model
        rows.append(DimensionRow(d=d, phi=loo.phi, max_khat=loo.max_khat,
                                 n_bad_khat=loo.n_bad_khat))
        ok = [r for r in rows if not r.failed]
        if early_stop and len(ok) >= 2 and ok[-1].phi < ok[-2].phi:
            break
    succeeded = [r for r in rows if not r.failed]
    if not succeeded:
        raise GPChoiceError(f"every candidate dimension 1..{d_max} failed to fit")
    d_star = max(succeeded, key=lambda r: r.phi).d
    return d_star, rows, models
