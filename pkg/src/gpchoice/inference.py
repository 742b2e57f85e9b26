"""Variational fitting of the latent-utility model.

The approximate posterior per latent dimension i is q_i = N(m_i, S_i) with
the two-parameter-per-point structure m_i = K alpha_i and
S_i = (K^{-1} + diag(lambda_i))^{-1} (Opper & Archambeau, 2009).  The ELBO

    E_q[log p(D | u, sigma)] - sum_i KL(q_i || N(0, K_i))

is estimated by reparameterized Monte Carlo, u_i = m_i + chol(S_i) xi, and
maximized with Adam jointly over {alpha_i, log lambda_i, log lengthscales,
log(sigma - sigma_min)}.  Gradients are computed analytically: the sampled
likelihood gradient is pushed back through the Cholesky factor, the
B = I + W K W factorization, and the kernel, by the standard
matrix-calculus adjoints (including a Cholesky reverse-mode rule).
The KL term is closed form:

    KL_i = 1/2 [ alpha_i' K alpha_i - tr(Lambda_i S_i) + log det B_i ].

MAP initialization runs Adam on a whitened latent embedding u = L w
(L = chol(K)) against log-likelihood plus standard-normal prior on w, and
sets alpha_i = K^{-1} m_MAP,i = L^{-T} w_i, lambda_i = 1.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .data import ChoiceDataset, PairEncoding, encode_pairs, validate_dataset
from .errors import NonFiniteError, ValidationError
from .kernels import KernelParams, gram_matrix
from .likelihood import SIGMA_MIN, log_lik_and_grad_batch, per_observation_log_lik
from .model import FitMeta, FittedModel, SiteMoments, site_moments

MAX_ITERS_WARNING = "MaxItersNoImprovement"


@dataclass
class FitConfig:
    """Knobs for :func:`fit`.  Defaults follow the reference training recipe."""

    iters: int = 5000
    learning_rate: float = 5e-3
    mc_samples: int = 64
    seed: int = 0
    shared_lengthscales: bool = True
    jitter: float = 1e-6
    init_lengthscale: float = 1.0
    init_sigma: float = 1.0
    optimize_hyperparams: bool = True  # False freezes lengthscales and sigma
    map_iters: int = 500
    map_learning_rate: float = 0.05
    final_elbo_samples: int = 2048
    convergence_window: int = 500
    convergence_tol: float = 1e-4

    def __post_init__(self):
        if self.iters < 1 or self.mc_samples < 1:
            raise ValidationError("iters and mc_samples must be at least 1")
        if self.learning_rate <= 0 or self.jitter <= 0:
            raise ValidationError("learning_rate and jitter must be positive")
        if self.init_sigma < SIGMA_MIN:
            raise ValidationError(f"init_sigma must be at least {SIGMA_MIN}")


@dataclass(frozen=True)
class VariationalState:
    """Variational parameters: 2 t d scalars plus kernel/scale hyperparameters."""

    alpha: np.ndarray            # (d, t) mean parameters (m_i = K alpha_i)
    site_prec: np.ndarray        # (d, t) positive diagonal precision parameters
    lengthscales: np.ndarray     # (c,) shared or (d, c)
    shared_lengthscales: bool
    sigma: float
    jitter: float = 1e-6


@dataclass
class FitReport:
    final_elbo: float
    trace: list[float]
    iterations: int
    converged: bool
    wall_seconds: float
    seed: int
    warnings: list[str] = field(default_factory=list)


class Adam:
    """Adam ascent on a dict of named parameter blocks."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for key, g in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            params[key] = params[key] + self.lr * (
                (self.m[key] / b1c) / (np.sqrt(self.v[key] / b2c) + self.eps)
            )


def chol_rev(chol: np.ndarray, chol_bar: np.ndarray) -> np.ndarray:
    """Adjoint of symmetric-matrix Cholesky: gradient w.r.t. S given d/dL.

    Given L = chol(S) (lower) and the gradient ``chol_bar`` of a scalar with
    respect to L, returns the symmetric gradient with respect to S.
    """
    p = np.tril(chol.T @ chol_bar)
    ii = np.diag_indices(chol.shape[0])
    p[ii] *= 0.5
    tmp = solve_triangular(chol, p, trans="T", lower=True, check_finite=False)
    s_bar = solve_triangular(chol, tmp.T, trans="T", lower=True, check_finite=False).T
    return 0.5 * (s_bar + s_bar.T)


def map_estimate(
    dataset: ChoiceDataset,
    d: int,
    init_params: KernelParams,
    max_iters: int = 500,
    learning_rate: float = 0.05,
    sigma: float = 1.0,
    enc: PairEncoding | None = None,
) -> np.ndarray:
    """MAP latent embedding (t, d): gradient ascent on log posterior from u=0.

    Optimizes the whitened variable w with u = L w, L = chol(K), so the prior
    term is simply -||w||^2 / 2; deterministic (full-batch Adam, zero start).
    """
    validate_dataset(dataset)
    if d < 1:
        raise ValidationError("latent dimension must be at least 1")
    if enc is None:
        enc = encode_pairs(dataset)
    gram = gram_matrix(dataset.objects.features, init_params)
    t = dataset.objects.n_objects
    w = np.zeros((t, d))
    params = {"w": w}
    opt = Adam(params, learning_rate)
    for _ in range(max_iters):
        u = gram.chol @ params["w"]
        ll, gu, _ = log_lik_and_grad_batch(enc, u, sigma)
        gw = gram.chol.T @ gu - params["w"]
        if not (np.isfinite(ll) and np.all(np.isfinite(gw))):
            raise NonFiniteError("non-finite MAP objective or gradient")
        opt.step(params, {"w": gw})
    return gram.chol @ params["w"]


def _raw_from_state(state: VariationalState) -> dict[str, np.ndarray]:
    if np.any(state.site_prec <= 0):
        raise ValidationError("site precisions must be positive")
    if state.sigma < SIGMA_MIN:
        raise ValidationError(f"sigma must be at least {SIGMA_MIN}")
    return {
        "alpha": np.array(state.alpha, dtype=float),
        "log_site": np.log(np.asarray(state.site_prec, dtype=float)),
        "log_ls": np.log(np.asarray(state.lengthscales, dtype=float)),
        "th_sigma": np.asarray(np.log(state.sigma - SIGMA_MIN + 1e-300), dtype=float),
    }


def _state_from_raw(raw: dict[str, np.ndarray], shared: bool, jitter: float) -> VariationalState:
    return VariationalState(
        alpha=raw["alpha"].copy(),
        site_prec=np.exp(raw["log_site"]),
        lengthscales=np.exp(raw["log_ls"]),
        shared_lengthscales=shared,
        sigma=SIGMA_MIN + float(np.exp(raw["th_sigma"])),
        jitter=jitter,
    )


def _dim_grams(raw, x, shared: bool, jitter: float):
    """Gram factors per latent dimension (one shared object when tied)."""
    d = raw["alpha"].shape[0]
    if shared:
        gram = gram_matrix(x, KernelParams(np.exp(raw["log_ls"]), jitter=jitter))
        return [gram] * d
    return [
        gram_matrix(x, KernelParams(np.exp(raw["log_ls"][i]), jitter=jitter))
        for i in range(d)
    ]


def _sq_feature_diffs(x: np.ndarray) -> np.ndarray:
    """(c, t, t) squared per-feature differences, fixed across iterations."""
    diff = x[:, None, :] - x[None, :, :]
    return np.ascontiguousarray((diff * diff).transpose(2, 0, 1))


def _kl_term(alpha_i: np.ndarray, m_i: np.ndarray, lam_i: np.ndarray,
             mom: SiteMoments) -> float:
    return 0.5 * (
        float(alpha_i @ m_i)
        - float(np.sum(lam_i * np.diag(mom.s_mat)))
        + mom.log_det_b
    )


def _elbo_core(
    raw: dict[str, np.ndarray],
    enc: PairEncoding,
    x: np.ndarray,
    xi: np.ndarray,
    shared: bool,
    jitter: float,
    d2: np.ndarray | None = None,
    want_grad: bool = True,
    lik_chunk: int = 512,
):
    """Monte-Carlo ELBO and (optionally) its gradient for all raw blocks.

    xi has shape (d, t, n_samples); common random numbers make the value a
    deterministic function of (raw, xi), which is what the finite-difference
    gradient check relies on.
    """
    alpha = raw["alpha"]
    d, t = alpha.shape
    n_mc = xi.shape[2]
    sigma = SIGMA_MIN + float(np.exp(raw["th_sigma"]))
    grams = _dim_grams(raw, x, shared, jitter)
    lam = np.exp(raw["log_site"])
    moments = [site_moments(grams[i], lam[i]) for i in range(d)]
    means = [grams[i].matrix @ alpha[i] for i in range(d)]

    u3 = np.empty((n_mc, t, d))
    for i in range(d):
        u3[:, :, i] = (means[i][:, None] + moments[i].s_chol @ xi[i]).T

    kl = sum(_kl_term(alpha[i], means[i], lam[i], moments[i]) for i in range(d))

    if not want_grad:
        total = 0.0
        for start in range(0, n_mc, lik_chunk):
            block = u3[start:start + lik_chunk]
            total += float(np.sum(
                per_observation_log_lik(enc, block, sigma).sum(axis=-1)))
        return total / n_mc - kl, None

    ll, gu, gs = log_lik_and_grad_batch(enc, u3, sigma)
    elbo_val = float(np.mean(ll)) - kl

    grads = {
        "alpha": np.empty_like(alpha),
        "log_site": np.empty_like(alpha),
        "log_ls": np.zeros_like(raw["log_ls"]),
        "th_sigma": np.asarray(float(np.mean(gs)) * np.exp(raw["th_sigma"])),
    }
    ls = np.exp(raw["log_ls"])
    if d2 is None:
        d2 = _sq_feature_diffs(x)
    k_bar_total = np.zeros((t, t)) if shared else None

    for i in range(d):
        mom = moments[i]
        k = grams[i].matrix
        g_mean = gu[:, :, i].mean(axis=0)                      # (t,)
        a_bar = (gu[:, :, i].T @ xi[i].T) / n_mc               # (t, t)

        grads["alpha"][i] = k @ (g_mean - alpha[i])

        s_bar = chol_rev(mom.s_chol, a_bar)
        s_bar[np.diag_indices(t)] += 0.5 * lam[i]
        m1 = mom.t_mat @ k
        t_bar = -k @ s_bar @ k
        wtw = mom.w[:, None] * t_bar * mom.w[None, :]
        b_bar = -0.5 * mom.b_inv - mom.b_inv @ wtw @ mom.b_inv
        w_bar = 2.0 * np.einsum("ab,b,ab->a", mom.b_inv, mom.w, t_bar)
        w_bar += 2.0 * np.einsum("ab,b,ab->a", k, mom.w, b_bar)
        lam_bar = w_bar / (2.0 * mom.w) + 0.5 * np.diag(mom.s_mat)
        grads["log_site"][i] = lam_bar * lam[i]

        k_bar = (
            np.outer(g_mean, alpha[i])
            - 0.5 * np.outer(alpha[i], alpha[i])
            + s_bar - s_bar @ m1.T - m1 @ s_bar
            + mom.w[:, None] * b_bar * mom.w[None, :]
        )
        if shared:
            k_bar_total += k_bar
        else:
            scale = ls[i] ** 2
            grads["log_ls"][i] = np.einsum("ab,ab,fab->f", k_bar, k, d2) / scale

    if shared:
        k = grams[0].matrix
        grads["log_ls"] = np.einsum("ab,ab,fab->f", k_bar_total, k, d2) / ls ** 2
    return elbo_val, grads


def elbo(state: VariationalState, dataset: ChoiceDataset, mc_samples: int,
         seed: int) -> float:
    """Monte-Carlo ELBO estimate; deterministic given the seed."""
    if mc_samples < 1:
        raise ValidationError("mc_samples must be at least 1")
    validate_dataset(dataset)
    enc = encode_pairs(dataset)
    raw = _raw_from_state(state)
    d, t = raw["alpha"].shape
    xi = np.random.default_rng(seed).standard_normal((d, t, mc_samples))
    value, _ = _elbo_core(
        raw, enc, dataset.objects.features, xi,
        state.shared_lengthscales, state.jitter, want_grad=False,
    )
    return value


def _smoothed(trace: np.ndarray, window: int = 100) -> np.ndarray:
    if trace.size < window:
        return np.array([trace.mean()])
    csum = np.concatenate([[0.0], np.cumsum(trace)])
    return (csum[window:] - csum[:-window]) / window


def _check_convergence(trace: list[float], window: int, tol: float) -> bool:
    """True when the smoothed (window-100) ELBO improved by a relative amount
    below tol over the final `window` iterations."""
    arr = np.asarray(trace)
    smooth = _smoothed(arr)
    if smooth.size <= window:
        return False
    recent, past = smooth[-1], smooth[-1 - window]
    return (recent - past) / max(abs(past), 1.0) < tol


def fit(dataset: ChoiceDataset, d: int, config: FitConfig | None = None
        ) -> tuple[FittedModel, FitReport]:
    """MAP-initialized stochastic-gradient ELBO maximization.

    Returns the frozen fitted model and a report with the per-iteration ELBO
    trace.  Bitwise deterministic for a fixed config (single RNG stream,
    fresh noise each iteration).
    """
    if config is None:
        config = FitConfig()
    validate_dataset(dataset)
    if d < 1:
        raise ValidationError("latent dimension must be at least 1")
    start = time.perf_counter()
    enc = encode_pairs(dataset)
    x = dataset.objects.features
    t, c = x.shape
    d2 = _sq_feature_diffs(x)

    init_kernel = KernelParams(
        np.full(c, float(config.init_lengthscale)), jitter=config.jitter)
    u_map = map_estimate(
        dataset, d, init_kernel,
        max_iters=config.map_iters,
        learning_rate=config.map_learning_rate,
        sigma=config.init_sigma,
        enc=enc,
    )
    gram0 = gram_matrix(x, init_kernel)
    # alpha = K^{-1} m_MAP, computed through the Cholesky factor.
    alpha0 = np.linalg.solve(gram0.matrix, u_map).T

    log_ls0 = np.log(np.full(c, float(config.init_lengthscale)))
    raw = {
        "alpha": alpha0,
        "log_site": np.zeros((d, t)),
        "log_ls": log_ls0 if config.shared_lengthscales else np.tile(log_ls0, (d, 1)),
        "th_sigma": np.asarray(np.log(config.init_sigma - SIGMA_MIN + 1e-300)),
    }
    opt = Adam(raw, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    trace: list[float] = []

    for iteration in range(config.iters):
        xi = rng.standard_normal((d, t, config.mc_samples))
        value, grads = _elbo_core(
            raw, enc, x, xi, config.shared_lengthscales, config.jitter, d2=d2)
        if not np.isfinite(value) or any(
                not np.all(np.isfinite(g)) for g in grads.values()):
            raise NonFiniteError(
                f"non-finite ELBO or gradient at iteration {iteration}")
        if not config.optimize_hyperparams:
            grads = {k: g for k, g in grads.items()
                     if k not in ("log_ls", "th_sigma")}
        opt.step(raw, grads)
        trace.append(value)

    xi_final = rng.standard_normal((d, t, config.final_elbo_samples))
    final_elbo, _ = _elbo_core(
        raw, enc, x, xi_final, config.shared_lengthscales, config.jitter,
        d2=d2, want_grad=False)

    converged = _check_convergence(
        trace, config.convergence_window, config.convergence_tol)
    report_warnings = []
    if not converged:
        report_warnings.append(MAX_ITERS_WARNING)
        warnings.warn(
            "ELBO still improving at the iteration limit; consider more iters",
            RuntimeWarning, stacklevel=2)

    state = _state_from_raw(raw, config.shared_lengthscales, config.jitter)
    model = FittedModel(
        objects=dataset.objects,
        latent_dim=d,
        lengthscales=state.lengthscales,
        shared_lengthscales=config.shared_lengthscales,
        sigma=state.sigma,
        alpha=state.alpha,
        site_prec=state.site_prec,
        jitter=config.jitter,
        meta=FitMeta(seed=config.seed, iterations=config.iters,
                     final_elbo=final_elbo),
    )
    report = FitReport(
        final_elbo=final_elbo,
        trace=trace,
        iterations=config.iters,
        converged=converged,
        wall_seconds=time.perf_counter() - start,
        seed=config.seed,
        warnings=report_warnings,
    )
    return model, report
