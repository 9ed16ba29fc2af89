"""Dense Gaussian reference layer.

Distributions are parameterized by the mean and the lower Cholesky factor
``L`` of the precision matrix, so the covariance is ``(L L^T)^-1``. Under
this parameterization the negative log-likelihood of an observation ``x``
(dropping the ``n log 2 pi`` constant throughout) is

    nll(x) = logdet(cov) + ||L^T (x - mean)||^2
           = -2 sum_i log(L_ii) + y^T y,    y = L^T (x - mean),

and a sample is drawn by solving the triangular system ``L^T y = u`` for a
standard normal ``u``. Everything here is dense and deliberately simple; the
banded and low-rank modules are validated against this layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ._backend import get_kernels

SYMMETRY_TOL = 1e-12
JACOBI_REL_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


class NotPositiveDefiniteError(ValueError):
    """Raised when a Cholesky factorization hits a non-positive pivot."""

    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite: pivot {pivot} is not positive")


class ConvergenceError(RuntimeError):
    """Raised when the iterative eigensolver fails to reach tolerance."""

    def __init__(self, off_norm: float, sweeps: int):
        self.off_norm = off_norm
        self.sweeps = sweeps
        super().__init__(
            f"eigensolver did not converge in {sweeps} sweeps "
            f"(off-diagonal norm {off_norm:.3e})"
        )


@dataclass(frozen=True)
class DenseGaussian:
    """Gaussian with dense lower-triangular precision factor.

    Attributes
    ----------
    mean : (n,) float array
    chol_precision : (n, n) float array
        Lower triangular with strictly positive diagonal; the precision
        matrix is ``chol_precision @ chol_precision.T``.
    """

    mean: np.ndarray
    chol_precision: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        factor = np.asarray(self.chol_precision, dtype=np.float64)
        if mean.ndim != 1 or factor.shape != (mean.size, mean.size):
            raise ValueError(
                f"shape mismatch: mean {mean.shape}, factor {factor.shape}"
            )
        if np.any(np.triu(factor, 1) != 0.0):
            raise ValueError("chol_precision must be lower triangular")
        if not np.all(np.diag(factor) > 0.0):
            raise ValueError("chol_precision needs a strictly positive diagonal")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol_precision", factor)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class EigenPairs:
    """Full eigendecomposition of a symmetric matrix.

    ``values`` are sorted descending (ties keep their original diagonal
    order); column ``j`` of ``vectors`` is the eigenvector for ``values[j]``.
    """

    values: np.ndarray
    vectors: np.ndarray


def _check_symmetric(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if float(np.max(np.abs(a - a.T))) > SYMMETRY_TOL * scale:
        raise ValueError(f"{name} is not symmetric within tolerance")
    return a


def logdet_cov(chol_precision: np.ndarray) -> float:
    """Log-determinant of the covariance implied by a precision factor.

    Parameters
    ----------
    chol_precision : (n, n) lower-triangular array

    Returns
    -------
    float
        ``-2 * sum(log(diag(chol_precision)))``, which equals
        ``log det (L L^T)^-1``.
    """
    diag = np.diag(np.asarray(chol_precision, dtype=np.float64))
    if not np.all(diag > 0.0):
        raise ValueError("precision factor needs a strictly positive diagonal")
    return float(-2.0 * np.sum(np.log(diag)))


def nll_dense(gauss: DenseGaussian, x: np.ndarray) -> float:
    """Negative log-likelihood of ``x``, without the ``n log 2 pi`` term.

    Computed as ``logdet(cov) + y^T y`` with ``y = L^T (x - mean)``; no
    matrix is inverted.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != gauss.mean.shape:
        raise ValueError(f"x has shape {x.shape}, expected {gauss.mean.shape}")
    y = gauss.chol_precision.T @ (x - gauss.mean)
    return float(y @ y) + logdet_cov(gauss.chol_precision)


def sample_dense(gauss: DenseGaussian, u: np.ndarray) -> np.ndarray:
    """Transform standard-normal draws into samples of ``gauss``.

    Solves ``L^T y = u`` by back substitution and returns ``mean + y``.
    ``u`` may be a single vector ``(n,)`` or a batch ``(..., n)``.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != gauss.dim:
        raise ValueError(f"u has trailing dimension {u.shape[-1]}, expected {gauss.dim}")
    flat = u.reshape(-1, gauss.dim)
    y = solve_triangular(gauss.chol_precision, flat.T, lower=True, trans="T").T
    return (gauss.mean + y).reshape(u.shape)


def chol_factor(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefiniteError
        If a non-positive pivot is hit; the exception carries the failing
        pivot index.
    """
    a = _check_symmetric(a, "matrix")
    lower, pivot = get_kernels().chol_factor(np.ascontiguousarray(a))
    if pivot >= 0:
        raise NotPositiveDefiniteError(int(pivot))
    return lower


def covariance_from_factor(chol_precision: np.ndarray) -> np.ndarray:
    """Dense covariance ``(L L^T)^-1`` from a lower precision factor."""
    factor = np.asarray(chol_precision, dtype=np.float64)
    inv = solve_triangular(factor, np.eye(factor.shape[0]), lower=True)
    cov = inv.T @ inv
    return (cov + cov.T) / 2.0


def gaussian_kl(cov0: np.ndarray, cov1: np.ndarray) -> float:
    """KL divergence between zero-mean Gaussians, ``KL(N(0,cov0) || N(0,cov1))``.

    Evaluates ``0.5 * (tr(cov1^-1 cov0) - n + log det cov1 - log det cov0)``
    through Cholesky factors; raises :class:`NotPositiveDefiniteError` if
    either matrix fails to factor.
    """
    c0 = _check_symmetric(cov0, "cov0")
    c1 = _check_symmetric(cov1, "cov1")
    if c0.shape != c1.shape:
        raise ValueError("covariance shapes differ")
    l0 = chol_factor(c0)
    l1 = chol_factor(c1)
    # tr(cov1^-1 cov0) = ||L1^-1 L0||_F^2 for covariance factors L0, L1.
    m = solve_triangular(l1, l0, lower=True)
    trace = float(np.sum(m * m))
    logdet_ratio = 2.0 * float(np.sum(np.log(np.diag(l1))) - np.sum(np.log(np.diag(l0))))
    return 0.5 * (trace - c0.shape[0] + logdet_ratio)


def frobenius_dist(a: np.ndarray, b: np.ndarray) -> float:
    """Entrywise Frobenius distance ``sqrt(sum((a - b)^2))``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def sym_eigen(a: np.ndarray) -> EigenPairs:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Rotations run in round-robin pair order until the off-diagonal Frobenius
    norm falls below ``1e-12`` relative to the input norm, capped at 100
    sweeps.

    Returns
    -------
    EigenPairs
        Eigenvalues descending; ties are broken by ascending original index
        (the sort is stable with respect to the solver's diagonal order).

    Raises
    ------
    ConvergenceError
        If the sweep cap is reached first.
    """
    a = _check_symmetric(a, "matrix")
    sym = np.ascontiguousarray((a + a.T) / 2.0)
    values, vectors, off_norm, converged = get_kernels().jacobi_eigh(
        sym, JACOBI_REL_TOL, JACOBI_MAX_SWEEPS
    )
    if not converged:
        raise ConvergenceError(float(off_norm), JACOBI_MAX_SWEEPS)
    order = np.argsort(-values, kind="stable")
    return EigenPairs(values=values[order], vectors=vectors[:, order])
