"""Low-rank-plus-scaled-identity symmetric factors.

The implied matrix is ``S = Q diag(exp(log_v)) Q^T + a I`` with ``Q`` of
shape (n, n_v) and ``n_v << n``. Depending on ``mode`` it is read as the
precision matrix (``precision_side``) or as the covariance itself
(``covariance_side``); the two readings are NOT inverses of each other.

Every operation here works through the n_v x n_v capacitance matrix

    C = diag(exp(-log_v)) + Q^T Q / a,

so nothing ever forms an n x n dense intermediate: the matrix inversion
lemma gives ``S^-1 = (1/a) I - (1/a^2) Q C^-1 Q^T`` and the determinant
lemma gives ``log|S| = n log a + sum(log_v) + log|C|``.

Columns of ``Q`` are only softly orthonormal (the training loss carries
``ortho_penalty``), which matters for sampling: the symmetric root used by
:func:`lr_sample` is exact when ``Q^T Q = I`` and approximate otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .gaussian import chol_factor

PRECISION_SIDE = "precision_side"
COVARIANCE_SIDE = "covariance_side"


@dataclass(frozen=True)
class LowRankFactor:
    """Eigenvector-style factor of a precision or covariance matrix.

    q: (n, n_v) columns, softly orthonormal. log_v: (n_v,) log eigenvalues.
    diag_a: nonnegative ridge on the identity. mode: which side of the
    Gaussian ``S`` lives on.
    """

    q: np.ndarray
    log_v: np.ndarray
    diag_a: float
    mode: str = PRECISION_SIDE

    def __post_init__(self):
        q = np.ascontiguousarray(self.q, dtype=np.float64)
        log_v = np.ascontiguousarray(self.log_v, dtype=np.float64)
        if q.ndim != 2:
            raise ValueError(f"q must be 2-D, got shape {q.shape}")
        n, n_v = q.shape
        if n_v > n:
            raise ValueError(f"rank {n_v} exceeds dimension {n}")
        if log_v.shape != (n_v,):
            raise ValueError(f"log_v has shape {log_v.shape}, expected ({n_v},)")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(log_v))):
            raise ValueError("factor values must be finite")
        a = float(self.diag_a)
        if not np.isfinite(a) or a < 0.0:
            raise ValueError(f"diag_a must be finite and nonnegative, got {a}")
        if self.mode not in (PRECISION_SIDE, COVARIANCE_SIDE):
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "log_v", log_v)
        object.__setattr__(self, "diag_a", a)

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    @property
    def rank(self) -> int:
        return self.q.shape[1]


def ortho_penalty(q: np.ndarray) -> float:
    """Squared Frobenius distance of ``Q^T Q`` from the identity."""
    q = np.asarray(q, dtype=np.float64)
    gram = q.T @ q
    delta = gram - np.eye(q.shape[1])
    return float(np.sum(delta * delta))


def _capacitance(factor: LowRankFactor) -> np.ndarray:
    return np.diag(np.exp(-factor.log_v)) + (factor.q.T @ factor.q) / factor.diag_a


def _logdet_capacitance(c: np.ndarray) -> float:
    lower = chol_factor(c) if c.size else np.zeros((0, 0))
    return 2.0 * float(np.sum(np.log(np.diag(lower)))) if c.size else 0.0


def lr_logdet(factor: LowRankFactor) -> float:
    """Log-determinant of the implied covariance.

    With ``a > 0`` this reduces to the capacitance determinant; negated for
    ``precision_side`` because there the implied covariance is ``S^-1``.
    With ``a = 0`` the implied matrix is rank deficient unless ``n_v = n``,
    in which case (orthonormal columns) ``log|S|`` is just ``sum(log_v)``.
    """
    n = factor.dim
    if factor.diag_a == 0.0:
        if factor.rank < n:
            raise ValueError("a = 0 with rank deficiency: implied matrix is singular")
        logdet_s = float(np.sum(factor.log_v))
    else:
        logdet_s = (
            n * np.log(factor.diag_a)
            + float(np.sum(factor.log_v))
            + _logdet_capacitance(_capacitance(factor))
        )
    return -logdet_s if factor.mode == PRECISION_SIDE else logdet_s


def lr_nll(factor: LowRankFactor, mean: np.ndarray, x: np.ndarray) -> float:
    """Negative log-likelihood (no ``n log 2 pi`` term), O(n * n_v^2).

    precision_side scores ``r^T S r`` directly; covariance_side applies the
    matrix inversion lemma, one n_v x n_v solve and no dense n x n matrix.
    """
    mean = np.asarray(mean, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if mean.shape != (factor.dim,) or x.shape != (factor.dim,):
        raise ValueError("mean and x must match the factor dimension")
    r = x - mean
    t = factor.q.T @ r
    v = np.exp(factor.log_v)
    if factor.mode == PRECISION_SIDE:
        quad = factor.diag_a * float(r @ r) + float(v * t @ t)
    else:
        if factor.diag_a == 0.0:
            raise ValueError("covariance_side scoring requires a > 0")
        if factor.rank == 0:
            quad = float(r @ r) / factor.diag_a
        else:
            c = _capacitance(factor)
            lower = chol_factor(c)
            w = solve_triangular(lower, t, lower=True)
            quad = (float(r @ r) - float(w @ w) / factor.diag_a) / factor.diag_a
    return lr_logdet(factor) + quad


def lr_sample(factor: LowRankFactor, mean: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``mean + M u`` for a symmetric root ``M`` of the implied covariance.

    For ``precision_side`` with ``a > 0`` the root is

        M = Q [(V + aI)^-1/2 - a^-1/2 I] Q^T + a^-1/2 I,

    exact when ``Q`` has orthonormal columns; ``a = 0`` degenerates to the
    pseudo-root ``Q V^-1/2 Q^T`` whose samples live in span(Q).
    covariance_side uses the same shape with +1/2 powers.
    """
    mean = np.asarray(mean, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if mean.shape != (factor.dim,):
        raise ValueError("mean must match the factor dimension")
    if u.shape[-1] != factor.dim:
        raise ValueError("u must have trailing dimension equal to the factor dimension")
    v = np.exp(factor.log_v)
    a = factor.diag_a
    t = u @ factor.q  # (..., n_v)
    if factor.mode == PRECISION_SIDE:
        if a == 0.0:
            return mean + (t / np.sqrt(v)) @ factor.q.T
        scale = 1.0 / np.sqrt(v + a) - 1.0 / np.sqrt(a)
        return mean + u / np.sqrt(a) + (t * scale) @ factor.q.T
    if a == 0.0:
        return mean + (t * np.sqrt(v)) @ factor.q.T
    scale = np.sqrt(v + a) - np.sqrt(a)
    return mean + np.sqrt(a) * u + (t * scale) @ factor.q.T


def woodbury_inverse(factor: LowRankFactor) -> np.ndarray:
    """Dense inverse of the implied matrix via the matrix inversion lemma.

    Costs one n_v x n_v factorization plus a handful of thin matmuls;
    returns a symmetric (n, n) array. Note the ridge cannot be inverted
    separately: ``(Q V Q^T + aI)^-1 != (Q V Q^T)^-1 + (aI)^-1``.
    """
    a = factor.diag_a
    if a == 0.0:
        raise ValueError("the inversion identity requires a > 0")
    n = factor.dim
    if factor.rank == 0:
        return np.eye(n) / a
    c = _capacitance(factor)
    lower = chol_factor(c)  # raises if the capacitance is singular
    half = solve_triangular(lower, factor.q.T, lower=True)  # L^-1 Q^T
    inv = (np.eye(n) - (half.T @ half) / a) / a
    return (inv + inv.T) / 2.0


def implied_dense(factor: LowRankFactor) -> np.ndarray:
    """Densify ``Q V Q^T + a I``; oracle/testing helper, O(n^2 n_v)."""
    v = np.exp(factor.log_v)
    return (factor.q * v) @ factor.q.T + factor.diag_a * np.eye(factor.dim)
