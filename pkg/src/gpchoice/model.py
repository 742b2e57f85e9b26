"""Frozen fitted model: training inputs, hyperparameters, posterior moments.

The variational posterior per latent dimension i is N(m_i, S_i) with
m_i = K alpha_i and S_i = (K^{-1} + diag(site_prec_i))^{-1}.  S_i is formed
through B = I + W K W (W = diag(sqrt(site_prec))), the stable rearrangement
of the matrix-inversion-lemma form K - K (K + diag(site_prec)^{-1})^{-1} K;
a fixed 1e-10 diagonal jitter keeps the Cholesky of S_i safe.  Models are
immutable and safely shareable across threads; factorizations are cached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve

from .data import ObjectTable
from .errors import SchemaError, ValidationError
from .kernels import GramFactor, KernelParams, gram_matrix
from .likelihood import SIGMA_MIN

SCHEMA_VERSION = 1
S_JITTER = 1e-10


@dataclass(frozen=True)
class SiteMoments:
    """Per-dimension posterior pieces derived from (K, site_prec)."""

    w: np.ndarray        # sqrt(site_prec), (t,)
    b: np.ndarray        # I + W K W
    b_chol: np.ndarray
    b_inv: np.ndarray
    t_mat: np.ndarray    # W B^{-1} W = (K + diag(site_prec)^{-1})^{-1}
    s_mat: np.ndarray    # posterior covariance (jittered, symmetrized)
    s_chol: np.ndarray
    log_det_b: float


def site_moments(gram: GramFactor, site_prec: np.ndarray) -> SiteMoments:
    k = gram.matrix
    w = np.sqrt(np.asarray(site_prec, dtype=float))
    b = np.eye(k.shape[0]) + w[:, None] * k * w[None, :]
    b_chol = np.linalg.cholesky(b)
    b_inv = cho_solve((b_chol, True), np.eye(k.shape[0]), check_finite=False)
    t_mat = w[:, None] * b_inv * w[None, :]
    s_raw = k - k @ (t_mat @ k)
    s_mat = 0.5 * (s_raw + s_raw.T) + S_JITTER * np.eye(k.shape[0])
    s_chol = np.linalg.cholesky(s_mat)
    log_det_b = 2.0 * float(np.sum(np.log(np.diag(b_chol))))
    return SiteMoments(w, b, b_chol, b_inv, t_mat, s_mat, s_chol, log_det_b)


@dataclass(frozen=True)
class FitMeta:
    seed: int
    iterations: int
    final_elbo: float


@dataclass(frozen=True)
class FittedModel:
    """Everything needed for prediction and leave-one-out evaluation."""

    objects: ObjectTable
    latent_dim: int
    lengthscales: np.ndarray        # (c,) if shared else (d, c)
    shared_lengthscales: bool
    sigma: float
    alpha: np.ndarray               # (d, t)
    site_prec: np.ndarray           # (d, t)
    jitter: float
    meta: FitMeta

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        site = np.asarray(self.site_prec, dtype=float)
        ls = np.asarray(self.lengthscales, dtype=float)
        t = self.objects.n_objects
        if alpha.shape != (self.latent_dim, t) or site.shape != (self.latent_dim, t):
            raise ValidationError(
                f"parameter shapes {alpha.shape}/{site.shape} do not match "
                f"(d={self.latent_dim}, t={t})"
            )
        if np.any(site <= 0) or not np.all(np.isfinite(site)):
            raise ValidationError("site precisions must be positive and finite")
        if not np.all(np.isfinite(alpha)):
            raise ValidationError("alpha contains non-finite values")
        if self.sigma < SIGMA_MIN:
            raise ValidationError(f"sigma {self.sigma} below the {SIGMA_MIN} floor")
        expected = (self.objects.n_features,) if self.shared_lengthscales else (
            self.latent_dim, self.objects.n_features)
        if ls.shape != expected:
            raise ValidationError(f"lengthscales shape {ls.shape}, expected {expected}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "site_prec", site)
        object.__setattr__(self, "lengthscales", ls)

    @property
    def n_objects(self) -> int:
        return self.objects.n_objects

    def kernel_params(self, dim: int) -> KernelParams:
        ls = self.lengthscales if self.shared_lengthscales else self.lengthscales[dim]
        return KernelParams(ls, jitter=self.jitter)

    @cached_property
    def grams(self) -> tuple[GramFactor, ...]:
        if self.shared_lengthscales:
            g = gram_matrix(self.objects.features, self.kernel_params(0))
            return (g,) * self.latent_dim
        return tuple(
            gram_matrix(self.objects.features, self.kernel_params(i))
            for i in range(self.latent_dim)
        )

    @cached_property
    def moments(self) -> tuple[SiteMoments, ...]:
        return tuple(
            site_moments(self.grams[i], self.site_prec[i])
            for i in range(self.latent_dim)
        )

    @cached_property
    def posterior_mean(self) -> np.ndarray:
        """m_i = K alpha_i for every dimension, stacked as (t, d)."""
        return np.stack(
            [self.grams[i].matrix @ self.alpha[i] for i in range(self.latent_dim)],
            axis=1,
        )

    def posterior_cov(self, dim: int) -> np.ndarray:
        return self.moments[dim].s_mat

    def sample_posterior(self, n_samples: int, seed: int) -> np.ndarray:
        """Draw utilities at the training inputs, shape (n_samples, t, d)."""
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal((self.latent_dim, self.n_objects, n_samples))
        out = np.empty((n_samples, self.n_objects, self.latent_dim))
        mean = self.posterior_mean
        for i in range(self.latent_dim):
            out[:, :, i] = (mean[:, i][:, None] + self.moments[i].s_chol @ xi[i]).T
        return out


def model_to_dict(model: FittedModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "features": model.objects.features.tolist(),
        "latent_dim": model.latent_dim,
        "shared_lengthscales": model.shared_lengthscales,
        "lengthscales": model.lengthscales.tolist(),
        "sigma": model.sigma,
        "alpha": model.alpha.tolist(),
        "site_prec": model.site_prec.tolist(),
        "jitter": model.jitter,
        "meta": {
            "seed": model.meta.seed,
            "iterations": model.meta.iterations,
            "final_elbo": model.meta.final_elbo,
        },
    }


def model_from_dict(payload: dict) -> FittedModel:
    if not isinstance(payload, dict):
        raise SchemaError("model payload must be a JSON object")
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported model schema version {version!r}")
    required = ("features", "latent_dim", "shared_lengthscales", "lengthscales",
                "sigma", "alpha", "site_prec", "jitter", "meta")
    for key in required:
        if key not in payload:
            raise SchemaError(f"model payload is missing the '{key}' key")
    meta = payload["meta"]
    return FittedModel(
        objects=ObjectTable(np.asarray(payload["features"], dtype=float)),
        latent_dim=int(payload["latent_dim"]),
        lengthscales=np.asarray(payload["lengthscales"], dtype=float),
        shared_lengthscales=bool(payload["shared_lengthscales"]),
        sigma=float(payload["sigma"]),
        alpha=np.asarray(payload["alpha"], dtype=float),
        site_prec=np.asarray(payload["site_prec"], dtype=float),
        jitter=float(payload["jitter"]),
        meta=FitMeta(
            seed=int(meta["seed"]),
            iterations=int(meta["iterations"]),
            final_elbo=float(meta["final_elbo"]),
        ),
    )


def save_model(model: FittedModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path: str) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path} is not valid JSON: {exc}") from None
    return model_from_dict(payload)
