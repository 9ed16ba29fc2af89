"""Covariance-guided denoising on top of a linear reconstructor.

The residual of a reconstruction is projected onto the leading eigenvectors
of the predicted residual covariance; directions the model considers noise
are dropped, directions it considers structure are kept.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import CondRegressor, predict_gaussian
from .gaussian import sym_eigen
from .synthdata import LinearReconstructor


def eigen_project(cov: np.ndarray, signal: np.ndarray, k: int) -> np.ndarray:
    """Orthogonal projection of ``signal`` onto the top-``k`` eigenvectors.

    Eigenvalues are ordered descending with ties broken by a stable sort, so
    the selected subspace is deterministic for a given matrix.
    """
    cov = np.asarray(cov, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    n = cov.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if signal.shape[-1] != n:
        raise ValueError(f"signal dimension {signal.shape[-1]} does not match matrix {n}")
    top = sym_eigen(cov).vectors[:, :k]
    return (signal @ top) @ top.T


@dataclass(frozen=True)
class DenoiseResult:
    reconstruction: np.ndarray
    residual: np.ndarray
    projected: np.ndarray
    output: np.ndarray
    k_used: int


def _conditioning(recon: LinearReconstructor, reg: CondRegressor, x: np.ndarray) -> np.ndarray:
    expected = reg.weights[0].shape[0]
    if expected == recon.rank:
        return recon.code(x)
    if expected == recon.center.shape[0]:
        return recon.reconstruct(x)
    raise ValueError(
        f"regressor expects conditioning of size {expected}, which is neither the "
        f"code size {recon.rank} nor the signal size {recon.center.shape[0]}"
    )


def denoise(
    recon: LinearReconstructor,
    reg: CondRegressor,
    x_noisy: np.ndarray,
    k: int | None = None,
) -> DenoiseResult:
    """Reconstruct, then add back the covariance-aligned part of the residual.

    ``k`` defaults to a quarter of the signal dimension. The regressor is
    conditioned on the reconstruction code or on the reconstruction itself,
    chosen by its input width (code wins when the two sizes collide).
    """
    x_noisy = np.asarray(x_noisy, dtype=np.float64)
    if x_noisy.ndim != 1:
        raise ValueError("denoise works on one record at a time")
    n = x_noisy.shape[-1]
    if k is None:
        k = max(1, n // 4)
    reconstruction = recon.reconstruct(x_noisy)
    residual = x_noisy - reconstruction
    if k == n:
        # Complete basis: the projection is the identity, so skip it.
        projected = residual
    else:
        predicted = predict_gaussian(reg, _conditioning(recon, reg, x_noisy), reconstruction)
        projected = eigen_project(predicted.covariance(), residual, k)
    return DenoiseResult(
        reconstruction=reconstruction,
        residual=residual,
        projected=projected,
        output=reconstruction + projected,
        k_used=k,
    )
