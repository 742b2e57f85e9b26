"""ARD RBF kernel, the derived preference kernel, and jittered Gram factors.

The kernel scale is fixed at 1; only the per-feature lengthscales (and the
likelihood scale elsewhere) are free.  Gram matrices carry an explicit jitter
on the diagonal, escalated by factors of 10 until Cholesky succeeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import FactorizationError, ValidationError

MAX_JITTER = 1e-2


@dataclass(frozen=True)
class KernelParams:
    """Per-feature lengthscales plus the base diagonal jitter."""

    lengthscales: np.ndarray
    jitter: float = 1e-6

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValidationError(f"lengthscales must be positive and finite, got {ls}")
        if not (self.jitter > 0):
            raise ValidationError(f"jitter must be positive, got {self.jitter}")
        object.__setattr__(self, "lengthscales", ls)


def kernel_matrix(x1: np.ndarray, x2: np.ndarray, params: KernelParams) -> np.ndarray:
    """ARD RBF matrix k(x, x') = exp(-sum_f (x_f - x'_f)^2 / (2 l_f^2))."""
    a = np.atleast_2d(np.asarray(x1, dtype=float))
    b = np.atleast_2d(np.asarray(x2, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] != params.lengthscales.shape[0]:
        raise ValidationError(
            f"{params.lengthscales.shape[0]} lengthscales for {a.shape[1]} features"
        )
    a = a / params.lengthscales
    b = b / params.lengthscales
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-0.5 * np.maximum(d2, 0.0))


def rbf_ard(x: np.ndarray, y: np.ndarray, params: KernelParams) -> float:
    """Scalar kernel value between two feature vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return float(kernel_matrix(x[None, :], y[None, :], params)[0, 0])


def preference_kernel(
    pair1: tuple[np.ndarray, np.ndarray],
    pair2: tuple[np.ndarray, np.ndarray],
    params: KernelParams,
) -> float:
    """Covariance of utility differences u(a)-u(b) and u(a')-u(b').

    k_p((a,b),(a',b')) = k(a,a') - k(a,b') - k(b,a') + k(b,b').  Antisymmetric
    under swapping either pair's elements.
    """
    a, b = pair1
    ap, bp = pair2
    return (
        rbf_ard(a, ap, params)
        - rbf_ard(a, bp, params)
        - rbf_ard(b, ap, params)
        + rbf_ard(b, bp, params)
    )


@dataclass(frozen=True)
class GramFactor:
    """A jittered Gram matrix together with its lower Cholesky factor."""

    matrix: np.ndarray
    chol: np.ndarray
    jitter_used: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (K + jitter I) x = b."""
        return cho_solve((self.chol, True), b, check_finite=False)

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """Solve L x = b with L the lower Cholesky factor."""
        return solve_triangular(self.chol, b, lower=True, check_finite=False)


def gram_matrix(x: np.ndarray, params: KernelParams) -> GramFactor:
    """Gram matrix K + jitter I with escalating jitter until Cholesky succeeds.

    Jitter starts at params.jitter and grows by factors of 10 up to 1e-2;
    beyond that a FactorizationError is raised.
    """
    k = kernel_matrix(x, x, params)
    jitter = params.jitter
    eye = np.eye(k.shape[0])
    while True:
        try:
            chol = np.linalg.cholesky(k + jitter * eye)
            return GramFactor(matrix=k + jitter * eye, chol=chol, jitter_used=jitter)
        except np.linalg.LinAlgError:
            if jitter >= MAX_JITTER:
                raise FactorizationError(
                    f"Cholesky failed at maximum jitter {jitter:g} (n={k.shape[0]})"
                ) from None
            jitter = min(jitter * 10.0, MAX_JITTER)
