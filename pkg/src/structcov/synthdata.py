"""Synthetic datasets with known per-record ground-truth covariances.

Two families:

* splines: 1-D signals whose mean is a natural cubic spline through a few
  Gaussian knots and whose covariance couples amplitude to the mean;
* ellipses: binary images of filled ellipses whose covariance is a squared
  exponential stretched along the ellipse orientation.

Record ``idx`` of a dataset depends only on ``(seed, idx)``, never on how
many records are generated around it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .gaussian import chol_factor, sym_eigen

DATASET_MAGIC = b"SSYN"


@dataclass(frozen=True)
class SplineConfig:
    """Spline family parameters.

    ``diag_offset`` is the constant added to ``|mean|`` on the amplitude
    diagonal; ``None`` falls back to ``jitter``. ``mean_scale`` scales the
    spline before it enters both the mean and the amplitude coupling.
    """

    n_points: int = 50
    n_knots: int = 5
    lengthscale: float = 2.0
    variance: float = 0.05
    jitter: float = 1e-4
    mean_scale: float = 1.0
    diag_offset: float | None = None


@dataclass(frozen=True)
class EllipseConfig:
    """Ellipse family parameters; lengths are in pixels."""

    side: int = 16
    length_along: float = 4.0
    length_across: float = 0.75
    variance: float = 0.05
    jitter: float = 1e-4


@dataclass(frozen=True)
class SynthRecord:
    index: int
    mean: np.ndarray
    sample: np.ndarray
    gt_cov: np.ndarray


def _record_rng(seed: int, idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(idx,)))


# ---------------------------------------------------------------------------
# Splines


def cubic_spline(knots_x: np.ndarray, knots_y: np.ndarray, eval_x: np.ndarray) -> np.ndarray:
    """Natural cubic spline interpolation.

    Solves the tridiagonal second-derivative system with the Thomas
    algorithm; two knots degenerate to linear interpolation. Points outside
    the knot range continue the boundary segments.
    """
    knots_x = np.asarray(knots_x, dtype=np.float64)
    knots_y = np.asarray(knots_y, dtype=np.float64)
    eval_x = np.asarray(eval_x, dtype=np.float64)
    k = knots_x.shape[0]
    if k < 2:
        raise ValueError("need at least two knots")
    if knots_y.shape != (k,):
        raise ValueError("knots_x and knots_y must have the same length")
    h = np.diff(knots_x)
    if np.any(h <= 0):
        raise ValueError("knots_x must be strictly increasing")

    second = np.zeros(k)
    if k > 2:
        slope = np.diff(knots_y) / h
        diag = 2.0 * (h[:-1] + h[1:])
        rhs = 6.0 * np.diff(slope)
        lower = h[:-1].copy()
        upper = h[1:].copy()
        # Thomas forward sweep on the (k - 2)-sized natural system.
        for i in range(1, k - 2):
            w = lower[i] / diag[i - 1]
            diag[i] -= w * upper[i - 1]
            rhs[i] -= w * rhs[i - 1]
        second[k - 2] = rhs[k - 3] / diag[k - 3]
        for i in range(k - 4, -1, -1):
            second[i + 1] = (rhs[i] - upper[i] * second[i + 2]) / diag[i]

    seg = np.clip(np.searchsorted(knots_x, eval_x, side="right") - 1, 0, k - 2)
    t = eval_x - knots_x[seg]
    hs = h[seg]
    y0 = knots_y[seg]
    y1 = knots_y[seg + 1]
    m0 = second[seg]
    m1 = second[seg + 1]
    slope = (y1 - y0) / hs - hs * (2.0 * m0 + m1) / 6.0
    return y0 + t * (slope + t * (m0 / 2.0 + t * (m1 - m0) / (6.0 * hs)))


def spline_covariance(mean: np.ndarray, config: SplineConfig) -> np.ndarray:
    """Amplitude-modulated squared exponential on the 1-D grid.

    ``K = variance * exp(-(xi - xj)^2 / (2 l^2)) + jitter I`` and
    ``cov = D K D`` with ``D = diag(|mean| + diag_offset)``, so variability
    concentrates where the signal is large.
    """
    mean = np.asarray(mean, dtype=np.float64)
    n = mean.shape[0]
    grid = np.arange(n, dtype=np.float64)
    sq = (grid[:, None] - grid[None, :]) ** 2
    kernel = config.variance * np.exp(-sq / (2.0 * config.lengthscale**2))
    kernel[np.diag_indices(n)] += config.jitter
    offset = config.jitter if config.diag_offset is None else config.diag_offset
    amp = np.abs(mean) + offset
    # Outer product first keeps the result bitwise symmetric.
    return np.outer(amp, amp) * kernel


def _spline_record(idx: int, seed: int, config: SplineConfig) -> SynthRecord:
    rng = _record_rng(seed, idx)
    knots_x = np.linspace(0.0, config.n_points - 1.0, config.n_knots)
    knots_y = rng.standard_normal(config.n_knots)
    grid = np.arange(config.n_points, dtype=np.float64)
    mean = config.mean_scale * cubic_spline(knots_x, knots_y, grid)
    cov = spline_covariance(mean, config)
    sample = mean + chol_factor(cov) @ rng.standard_normal(config.n_points)
    return SynthRecord(index=idx, mean=mean, sample=sample, gt_cov=cov)


def gen_splines(
    count: int, seed: int, config: SplineConfig | None = None, start: int = 0
) -> list[SynthRecord]:
    """Records ``start .. start + count - 1``; record ``idx`` depends only on
    ``(seed, idx)``, so large datasets can be generated in chunks."""
    config = config or SplineConfig()
    if config.n_points < 2 or config.n_knots < 2:
        raise ValueError("need at least two grid points and two knots")
    return [_spline_record(idx, seed, config) for idx in range(start, start + count)]


# ---------------------------------------------------------------------------
# Ellipses


def ellipse_mask(
    center: np.ndarray, axes: np.ndarray, phi: float, side: int
) -> np.ndarray:
    """Boolean image of the filled rotated ellipse, pixel centers on the grid."""
    cols, rows = np.meshgrid(np.arange(side, dtype=np.float64),
                             np.arange(side, dtype=np.float64))
    dx = cols - center[0]
    dy = rows - center[1]
    c, s = np.cos(phi), np.sin(phi)
    along = (dx * c + dy * s) / axes[0]
    across = (-dx * s + dy * c) / axes[1]
    return along * along + across * across <= 1.0


def ellipse_covariance(phi: float, config: EllipseConfig) -> np.ndarray:
    """Squared exponential elongated along the direction ``phi``.

    Pixel displacements are projected onto the rotated frame; the along
    component decays with ``length_along``, the across component with
    ``length_across``.
    """
    side = config.side
    cols, rows = np.meshgrid(np.arange(side, dtype=np.float64),
                             np.arange(side, dtype=np.float64))
    px = cols.ravel()
    py = rows.ravel()
    dx = px[:, None] - px[None, :]
    dy = py[:, None] - py[None, :]
    c, s = np.cos(phi), np.sin(phi)
    along = dx * c + dy * s
    across = -dx * s + dy * c
    quad = (along / config.length_along) ** 2 + (across / config.length_across) ** 2
    cov = config.variance * np.exp(-0.5 * quad)
    cov[np.diag_indices(side * side)] += config.jitter
    return cov


def _ellipse_record(idx: int, seed: int, config: EllipseConfig) -> SynthRecord:
    rng = _record_rng(seed, idx)
    side = config.side
    axis_hi = side / 3.0
    axis_lo = 2.0 if axis_hi > 2.0 else 1.0
    for _ in range(100):
        center = rng.uniform(side / 4.0, 3.0 * side / 4.0, size=2)
        axes = rng.uniform(axis_lo, axis_hi, size=2)
        phi = rng.uniform(0.0, np.pi)
        mask = ellipse_mask(center, axes, phi, side)
        # A render with no boundary carries no shape information.
        if mask.any() and not mask.all():
            break
    else:
        raise RuntimeError("could not draw a non-degenerate ellipse in 100 tries")
    mean = np.where(mask, 1.0, -1.0).ravel()
    cov = ellipse_covariance(phi, config)
    sample = mean + chol_factor(cov) @ rng.standard_normal(side * side)
    return SynthRecord(index=idx, mean=mean, sample=sample, gt_cov=cov)


def gen_ellipses(
    count: int, seed: int, config: EllipseConfig | None = None, start: int = 0
) -> list[SynthRecord]:
    """Records ``start .. start + count - 1``; record ``idx`` depends only on
    ``(seed, idx)``, so large datasets can be generated in chunks."""
    config = config or EllipseConfig()
    if config.side < 4:
        raise ValueError("side must be at least 4")
    return [_ellipse_record(idx, seed, config) for idx in range(start, start + count)]


# ---------------------------------------------------------------------------
# Linear reconstructor


@dataclass(frozen=True)
class LinearReconstructor:
    """Principal-subspace encoder/decoder fitted to a sample matrix."""

    center: np.ndarray
    components: np.ndarray  # (n, rank), orthonormal columns

    @property
    def rank(self) -> int:
        return self.components.shape[1]

    def code(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.center) @ self.components

    def decode(self, code: np.ndarray) -> np.ndarray:
        return self.center + np.asarray(code, dtype=np.float64) @ self.components.T

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.decode(self.code(x))


def linear_reconstructor_fit(samples: np.ndarray, rank: int) -> LinearReconstructor:
    """Top principal directions of the sample covariance."""
    samples = np.asarray(samples, dtype=np.float64)
    records, n = samples.shape
    if not 1 <= rank <= n:
        raise ValueError(f"rank must be in [1, {n}]")
    center = samples.mean(axis=0)
    resid = samples - center
    cov = resid.T @ resid / records
    pairs = sym_eigen(cov)
    return LinearReconstructor(center=center, components=pairs.vectors[:, :rank].copy())


# ---------------------------------------------------------------------------
# Serialization


def write_dataset(dest: str | BinaryIO, records: list[SynthRecord]) -> None:
    """Layout: magic, u32 n, u32 count, then per record f64 mean, sample,
    row-major covariance."""
    if not records:
        raise ValueError("refusing to write an empty dataset")
    n = records[0].mean.shape[0]
    chunks = [DATASET_MAGIC, struct.pack("<II", n, len(records))]
    for rec in records:
        if rec.mean.shape != (n,) or rec.sample.shape != (n,) or rec.gt_cov.shape != (n, n):
            raise ValueError("inconsistent record shapes")
        chunks.append(np.ascontiguousarray(rec.mean, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(rec.sample, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(rec.gt_cov, dtype="<f8").tobytes())
    data = b"".join(chunks)
    if isinstance(dest, str):
        with open(dest, "wb") as fh:
            fh.write(data)
    else:
        dest.write(data)


def read_dataset(src: str | BinaryIO) -> list[SynthRecord]:
    if isinstance(src, str):
        with open(src, "rb") as fh:
            data = fh.read()
    else:
        data = src.read()
    if data[:4] != DATASET_MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}, expected {DATASET_MAGIC!r}")
    n, count = struct.unpack_from("<II", data, 4)
    stride = 8 * (2 * n + n * n)
    if len(data) != 12 + count * stride:
        raise ValueError(f"dataset length {len(data)} does not match header")
    records = []
    offset = 12
    for idx in range(count):
        mean = np.frombuffer(data, dtype="<f8", count=n, offset=offset).copy()
        offset += 8 * n
        sample = np.frombuffer(data, dtype="<f8", count=n, offset=offset).copy()
        offset += 8 * n
        cov = np.frombuffer(data, dtype="<f8", count=n * n, offset=offset).reshape(n, n).copy()
        offset += 8 * n * n
        records.append(SynthRecord(index=idx, mean=mean, sample=sample, gt_cov=cov))
    return records
