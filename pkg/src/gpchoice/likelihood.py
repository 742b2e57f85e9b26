"""Choice-function likelihood: per-observation factors, gradients, reductions.

An observation (A_k, C_k) contributes two kinds of factors, with
p(o dom v) = prod_i Phi((u_i(o) - u_i(v)) / sigma):

* for every unordered pair {o, v} in C_k: 1 - p(o dom v) - p(v dom o),
* for every rejected v in R_k:          1 - prod_{o in C_k} (1 - p(o dom v)).

Products of Phi are accumulated as sums of log Phi (computed via erfc), and
each factor is clamped to [eps, 1-eps] before taking the log.  A clamped
factor is constant, so its gradient contribution is zero; this keeps the
analytic gradients exactly consistent with finite differences of the clamped
objective.  Utilities may carry a leading sample axis; everything broadcasts.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtr

from .data import ChoiceDataset, ChoiceObservation, ObjectTable, PairEncoding, encode_pairs
from .errors import ValidationError

SIGMA_MIN = 1e-4
FACTOR_EPS = 1e-12
_LOG_EPS = float(np.log(FACTOR_EPS))
_LOG_SQRT_2PI = 0.5 * float(np.log(2.0 * np.pi))
# Cap log-probabilities just below 0 so 1 - p stays representable.
_LP_MAX = float(np.log1p(-1e-15))


def validate_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma < SIGMA_MIN:
        raise ValidationError(f"sigma must be finite and >= {SIGMA_MIN}, got {sigma}")
    return sigma


def log1mexp(x: np.ndarray) -> np.ndarray:
    """log(1 - exp(x)) for x <= 0, stable over the whole range."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < -np.log(2.0)
    with np.errstate(divide="ignore"):
        np.log1p(-np.exp(x, where=small, out=np.zeros_like(x)), where=small, out=out)
        np.log(-np.expm1(x, where=~small, out=np.zeros_like(x)), where=~small, out=out)
    return out


def dominance_prob(o_utils: np.ndarray, v_utils: np.ndarray, sigma: float) -> float:
    """Probability that o Pareto-dominates v under the probit relaxation."""
    sigma = validate_sigma(sigma)
    o = np.atleast_1d(np.asarray(o_utils, dtype=float))
    v = np.atleast_1d(np.asarray(v_utils, dtype=float))
    if o.shape != v.shape:
        raise ValidationError(f"utility vectors differ in shape: {o.shape} vs {v.shape}")
    return float(np.exp(np.sum(log_ndtr((o - v) / sigma))))


def _as_batch(u: np.ndarray) -> tuple[np.ndarray, bool]:
    u = np.asarray(u, dtype=float)
    if u.ndim == 2:
        return u[None, :, :], True
    if u.ndim == 3:
        return u, False
    raise ValidationError(f"utilities must be (t,d) or (S,t,d), got shape {u.shape}")


def _pair_terms(enc: PairEncoding, u3: np.ndarray, sigma: float):
    """Per-pair log factors plus the intermediates the gradient needs."""
    zp = (u3[:, enc.pairs[:, 0], :] - u3[:, enc.pairs[:, 1], :]) / sigma
    lpf_d = log_ndtr(zp)
    lpb_d = log_ndtr(-zp)
    lpf = np.minimum(lpf_d.sum(axis=-1), _LP_MAX)
    lpb = np.minimum(lpb_d.sum(axis=-1), _LP_MAX)
    raw = 1.0 - np.exp(lpf) - np.exp(lpb)
    clamped = np.clip(raw, FACTOR_EPS, 1.0 - FACTOR_EPS)
    logf = np.log(clamped)
    active = (raw > FACTOR_EPS) & (raw < 1.0 - FACTOR_EPS)
    return logf, (zp, lpf_d, lpb_d, lpf, lpb, active)


def _group_terms(enc: PairEncoding, u3: np.ndarray, sigma: float):
    """Per-group log factors plus the intermediates the gradient needs."""
    ze = (u3[:, enc.ent_chosen, :] - u3[:, enc.ent_rejected, :]) / sigma
    lpe_d = log_ndtr(ze)
    lpe = np.minimum(lpe_d.sum(axis=-1), _LP_MAX)
    l1me = log1mexp(lpe)
    # Entries are stored contiguously per group and every group is non-empty,
    # so reduceat segments are exactly the groups.
    sg = np.add.reduceat(l1me, enc.ent_ptr[:-1], axis=-1)
    raw = -np.expm1(sg)
    clamped = np.clip(raw, FACTOR_EPS, 1.0 - FACTOR_EPS)
    logf = np.log(clamped)
    active = (raw > FACTOR_EPS) & (raw < 1.0 - FACTOR_EPS)
    return logf, (ze, lpe_d, lpe, l1me, sg, active)


def _segment_sum(values: np.ndarray, ptr: np.ndarray, n_obs: int) -> np.ndarray:
    """Sum contiguous segments (some possibly empty) into (S, n_obs).

    A trailing zero pad keeps every reduceat start index valid even when
    segments at the end are empty; empty segments are then zeroed explicitly
    (reduceat yields values[start] for a zero-length segment).
    """
    if values.shape[-1] == 0:
        return np.zeros(values.shape[:-1] + (n_obs,))
    pad = np.zeros(values.shape[:-1] + (1,))
    padded = np.concatenate([values, pad], axis=-1)
    seg = np.add.reduceat(padded, ptr[:-1], axis=-1)
    seg[..., np.diff(ptr) == 0] = 0.0
    return seg


def per_observation_log_lik(
    enc: PairEncoding, u: np.ndarray, sigma: float
) -> np.ndarray:
    """Log-likelihood of each observation; shape (m,) or (S, m) for batched u."""
    sigma = validate_sigma(sigma)
    u3, squeeze = _as_batch(u)
    out = np.zeros((u3.shape[0], enc.n_obs))
    if enc.n_pairs:
        logf, _ = _pair_terms(enc, u3, sigma)
        out += _segment_sum(logf, enc.pair_ptr, enc.n_obs)
    if enc.n_groups:
        logf, _ = _group_terms(enc, u3, sigma)
        out += _segment_sum(logf, enc.group_ptr, enc.n_obs)
    return out[0] if squeeze else out


def log_lik_dataset(
    dataset: ChoiceDataset, u: np.ndarray, sigma: float, enc: PairEncoding | None = None
) -> float:
    """Total choice log-likelihood: sum of the per-observation log factors."""
    if enc is None:
        enc = encode_pairs(dataset)
    return float(np.sum(per_observation_log_lik(enc, np.asarray(u, dtype=float), sigma)))


def log_lik_observation(obs: ChoiceObservation, u: np.ndarray, sigma: float) -> float:
    """Log-likelihood of a single observation under utilities u (t x d)."""
    u = np.asarray(u, dtype=float)
    # Placeholder features (distinct rows); only the utilities enter the factors.
    table = ObjectTable(np.arange(u.shape[0], dtype=float)[:, None])
    enc = encode_pairs(ChoiceDataset(table, (obs,)))
    return float(np.sum(per_observation_log_lik(enc, u, sigma)))


def _log_phi(z: np.ndarray) -> np.ndarray:
    return -0.5 * z * z - _LOG_SQRT_2PI


def log_lik_and_grad_batch(
    enc: PairEncoding, u: np.ndarray, sigma: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values and gradients for a batch of utility samples.

    Parameters
    ----------
    u : (S, t, d) array of utility samples.

    Returns
    -------
    ll : (S,) total log-likelihood per sample.
    gu : (S, t, d) gradient with respect to the utilities.
    gs : (S,) gradient with respect to sigma.
    """
    sigma = validate_sigma(sigma)
    u3, squeeze = _as_batch(u)
    ns, t, d = u3.shape
    ll = np.zeros(ns)
    gu = np.zeros((t, ns, d))
    gs = np.zeros(ns)

    if enc.n_pairs:
        logf, (zp, lpf_d, lpb_d, lpf, lpb, active) = _pair_terms(enc, u3, sigma)
        ll += logf.sum(axis=-1)
        # a_i = p * phi(z_i)/Phi(z_i) / F and the mirrored b_i; see module doc.
        a = np.exp(lpf[..., None] - logf[..., None] + _log_phi(zp) - lpf_d)
        b = np.exp(lpb[..., None] - logf[..., None] + _log_phi(zp) - lpb_d)
        a *= active[..., None]
        b *= active[..., None]
        contrib = (b - a) / sigma
        np.add.at(gu, enc.pairs[:, 0], contrib.transpose(1, 0, 2))
        np.subtract.at(gu, enc.pairs[:, 1], contrib.transpose(1, 0, 2))
        gs += np.sum(zp * (a - b), axis=(-1, -2)) / sigma

    if enc.n_groups:
        logf, (ze, lpe_d, lpe, l1me, sg, active) = _group_terms(enc, u3, sigma)
        ll += logf.sum(axis=-1)
        g_of_e = enc.ent_group
        weight = np.exp(sg[..., g_of_e] - l1me - logf[..., g_of_e])
        weight *= active[..., g_of_e]
        pr = np.exp(lpe[..., None] + _log_phi(ze) - lpe_d)
        contrib = weight[..., None] * pr / sigma
        np.add.at(gu, enc.ent_chosen, contrib.transpose(1, 0, 2))
        np.subtract.at(gu, enc.ent_rejected, contrib.transpose(1, 0, 2))
        gs -= np.sum(weight[..., None] * pr * ze, axis=(-1, -2)) / sigma

    gu = gu.transpose(1, 0, 2)
    if squeeze:
        return ll[0], gu[0], gs[0]
    return ll, gu, gs


def grad_log_lik(
    dataset: ChoiceDataset, u: np.ndarray, sigma: float, enc: PairEncoding | None = None
) -> tuple[np.ndarray, float]:
    """Exact gradient of log_lik_dataset with respect to u (t x d) and sigma."""
    if enc is None:
        enc = encode_pairs(dataset)
    _, gu, gs = log_lik_and_grad_batch(enc, np.asarray(u, dtype=float), sigma)
    return gu, float(gs)


def batch_likelihood(
    o_util: float, rejected_utils: np.ndarray, sigma: float, quadrature_order: int = 64
) -> float:
    """Single-utility batch likelihood with one shared noise draw (d=1).

    Gauss-Hermite estimate of
    int prod_v Phi((u(o) + w - u(v)) / sigma) N(w; 0, sigma^2) dw.
    With a single rejected v this collapses to Phi((u(o)-u(v)) / (sqrt(2) sigma)),
    the two-noise pairwise comparison.  Because every factor is increasing in the
    shared draw w, the integral is bounded below by the product of its own
    per-comparison marginals, prod_v Phi((u(o)-u(v)) / (sqrt(2) sigma)):
    ignoring the correlation induced by sharing w can only lose probability.
    """
    sigma = validate_sigma(sigma)
    if quadrature_order < 16:
        raise ValidationError(f"quadrature_order must be >= 16, got {quadrature_order}")
    delta = (float(o_util) - np.atleast_1d(np.asarray(rejected_utils, dtype=float))) / sigma
    nodes, weights = np.polynomial.hermite.hermgauss(int(quadrature_order))
    # substitute w = sqrt(2) sigma y; sigma cancels inside Phi
    vals = np.exp(np.sum(log_ndtr(delta[None, :] + np.sqrt(2.0) * nodes[:, None]), axis=1))
    return float(np.dot(weights, vals) / np.sqrt(np.pi))


def probit_log_lik(differences: np.ndarray, sigma: float) -> float:
    """Binary probit preference log-likelihood: sum log Phi(delta / sigma)."""
    sigma = validate_sigma(sigma)
    return float(np.sum(log_ndtr(np.asarray(differences, dtype=float) / sigma)))


def preference_prob(difference: float, sigma: float) -> float:
    """Phi(delta / sigma): probability that the first item is preferred."""
    sigma = validate_sigma(sigma)
    return float(ndtr(difference / sigma))
