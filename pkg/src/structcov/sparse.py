"""Banded lower-Cholesky precision factors on pixel grids.

A factor entry ``L[i, j]`` is stored only when ``j <= i`` and pixel ``j``
falls inside the odd-sized patch centered on pixel ``i`` (Chebyshev distance
on the grid, no wraparound, pixels in raster order). Diagonal entries are
kept in log space, so the factor is positive definite by construction and
the stored entry count is at most ``n * ((f*f - 1) / 2 + 1)``.

The negative log-likelihood and the sampling solve touch stored entries
only, which makes both O(n * f^2) instead of O(n^2).
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, NamedTuple

import numpy as np

from ._backend import get_kernels

PATTERN_MAGIC = b"SCHL"


class GridShape(NamedTuple):
    """Image grid extent; height rows by width columns, raster order."""

    height: int
    width: int

    @property
    def pixels(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class NeighborhoodPattern:
    """Sparsity structure shared by every factor on one grid.

    ``ent_i`` / ``ent_j`` list the strictly-lower stored entries in row-major
    order; diagonal entries are implicit (always present). ``col_order`` and
    ``col_ptr`` regroup the same entries by column for back substitution.
    """

    shape: GridShape
    patch: int
    ent_i: np.ndarray
    ent_j: np.ndarray
    row_ptr: np.ndarray
    col_order: np.ndarray = field(repr=False)
    col_ptr: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.shape.pixels

    @property
    def offdiag_count(self) -> int:
        return int(self.ent_i.size)

    @property
    def entry_count(self) -> int:
        return self.n + self.offdiag_count

    def row_columns(self, i: int) -> np.ndarray:
        """Sorted column indices with a stored entry in row ``i``, diagonal included."""
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return np.concatenate([self.ent_j[lo:hi], [i]])


def build_pattern(shape: GridShape | tuple[int, int], patch: int) -> NeighborhoodPattern:
    """Enumerate the stored entries for a grid and patch size.

    ``patch`` must be odd and at most ``2 * max(height, width) - 1``; a
    1 x n grid with ``patch = 2n - 1`` degenerates to the full lower
    triangle.
    """
    shape = GridShape(*shape)
    height, width = shape
    if height < 1 or width < 1:
        raise ValueError(f"grid must be nonempty, got {shape}")
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch size must be odd and positive, got {patch}")
    if patch > 2 * max(height, width) - 1:
        raise ValueError(
            f"patch {patch} exceeds 2 * max(height, width) - 1 = {2 * max(height, width) - 1}"
        )
    radius = (patch - 1) // 2
    n = shape.pixels
    ent_i = []
    ent_j = []
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        r, c = divmod(i, width)
        for rr in range(max(0, r - radius), min(height, r + radius + 1)):
            base = rr * width
            for cc in range(max(0, c - radius), min(width, c + radius + 1)):
                j = base + cc
                if j < i:
                    ent_i.append(i)
                    ent_j.append(j)
        row_ptr[i + 1] = len(ent_i)
    ent_i = np.array(ent_i, dtype=np.int64)
    ent_j = np.array(ent_j, dtype=np.int64)
    col_order = np.lexsort((ent_i, ent_j)).astype(np.int64)
    col_ptr = np.searchsorted(ent_j[col_order], np.arange(n + 1)).astype(np.int64)
    return NeighborhoodPattern(
        shape=shape,
        patch=patch,
        ent_i=ent_i,
        ent_j=ent_j,
        row_ptr=row_ptr,
        col_order=col_order,
        col_ptr=col_ptr,
    )


@dataclass(frozen=True)
class SparseCholesky:
    """Factor values on a :class:`NeighborhoodPattern`.

    ``log_diag[i]`` is ``log L[i, i]``; ``off_diag`` follows the pattern's
    row-major entry order.
    """

    pattern: NeighborhoodPattern
    log_diag: np.ndarray
    off_diag: np.ndarray

    def __post_init__(self):
        log_diag = np.ascontiguousarray(self.log_diag, dtype=np.float64)
        off_diag = np.ascontiguousarray(self.off_diag, dtype=np.float64)
        if log_diag.shape != (self.pattern.n,):
            raise ValueError(
                f"log_diag has shape {log_diag.shape}, expected ({self.pattern.n},)"
            )
        if off_diag.shape != (self.pattern.offdiag_count,):
            raise ValueError(
                f"off_diag has shape {off_diag.shape}, "
                f"expected ({self.pattern.offdiag_count},)"
            )
        if not (np.all(np.isfinite(log_diag)) and np.all(np.isfinite(off_diag))):
            raise ValueError("factor values must be finite")
        object.__setattr__(self, "log_diag", log_diag)
        object.__setattr__(self, "off_diag", off_diag)


def whiten_batch(
    pattern: NeighborhoodPattern,
    off_diag: np.ndarray,
    log_diag: np.ndarray,
    resid: np.ndarray,
) -> np.ndarray:
    """``y = L^T r`` for a batch of factors sharing one pattern.

    All three value arrays carry a leading batch axis; used directly by the
    training loop, and with batch size one by :func:`nll_sparse`.
    """
    off_diag = np.ascontiguousarray(off_diag, dtype=np.float64)
    log_diag = np.ascontiguousarray(log_diag, dtype=np.float64)
    resid = np.ascontiguousarray(resid, dtype=np.float64)
    return get_kernels().whiten_batch(
        off_diag, log_diag, resid, pattern.ent_i, pattern.ent_j
    )


def nll_sparse(sc: SparseCholesky, mean: np.ndarray, x: np.ndarray) -> float:
    """Negative log-likelihood (without the ``n log 2 pi`` term).

    ``logdet(cov) = -2 sum(log_diag)`` plus the squared norm of the whitened
    residual; only stored entries are touched.
    """
    mean = np.asarray(mean, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if mean.shape != (sc.pattern.n,) or x.shape != (sc.pattern.n,):
        raise ValueError("mean and x must be flat vectors matching the grid")
    y = whiten_batch(
        sc.pattern, sc.off_diag[None, :], sc.log_diag[None, :], (x - mean)[None, :]
    )[0]
    return float(y @ y - 2.0 * np.sum(sc.log_diag))


def sample_sparse(sc: SparseCholesky, mean: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Draw ``mean + y`` where ``L^T y = u``, by banded back substitution.

    ``u`` may be ``(n,)`` or a batch ``(..., n)``; the factor is shared.
    """
    mean = np.asarray(mean, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    n = sc.pattern.n
    if mean.shape != (n,):
        raise ValueError(f"mean has shape {mean.shape}, expected ({n},)")
    if u.shape[-1] != n:
        raise ValueError(f"u has trailing dimension {u.shape[-1]}, expected {n}")
    flat = np.ascontiguousarray(u.reshape(-1, n), dtype=np.float64)
    y = get_kernels().backsub_shared(
        sc.off_diag,
        sc.log_diag,
        flat,
        sc.pattern.ent_i,
        sc.pattern.col_order,
        sc.pattern.col_ptr,
    )
    return (mean + y).reshape(u.shape)


def to_dense(sc: SparseCholesky) -> np.ndarray:
    """Densify the factor into a full lower-triangular matrix."""
    n = sc.pattern.n
    lower = np.zeros((n, n), dtype=np.float64)
    lower[sc.pattern.ent_i, sc.pattern.ent_j] = sc.off_diag
    lower[np.diag_indices(n)] = np.exp(sc.log_diag)
    return lower


def precision_bandwidth(pattern: NeighborhoodPattern) -> int:
    """Largest ``|i - k|`` over structurally nonzero entries of ``L L^T``.

    Rows ``i`` and ``k`` meet in the precision matrix exactly when they share
    a stored column, so the bandwidth is the worst row spread within any
    column (the diagonal entry puts row ``j`` in column ``j``).
    """
    width = 0
    for j in range(pattern.n):
        lo, hi = pattern.col_ptr[j], pattern.col_ptr[j + 1]
        if hi > lo:
            rows = pattern.ent_i[pattern.col_order[lo:hi]]
            width = max(width, int(rows.max()) - j)
    return width


def write_sparse_chol(dest: str | BinaryIO, sc: SparseCholesky) -> None:
    """Serialize a factor: magic, u32 height/width/patch, f64 values, little-endian."""
    payload = io.BytesIO()
    payload.write(PATTERN_MAGIC)
    payload.write(
        struct.pack("<III", sc.pattern.shape.height, sc.pattern.shape.width, sc.pattern.patch)
    )
    payload.write(sc.log_diag.astype("<f8").tobytes())
    payload.write(sc.off_diag.astype("<f8").tobytes())
    data = payload.getvalue()
    if isinstance(dest, str):
        with open(dest, "wb") as fh:
            fh.write(data)
    else:
        dest.write(data)


def read_sparse_chol(src: str | BinaryIO) -> SparseCholesky:
    """Inverse of :func:`write_sparse_chol`; validates magic and length."""
    if isinstance(src, str):
        with open(src, "rb") as fh:
            data = fh.read()
    else:
        data = src.read()
    if data[:4] != PATTERN_MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}, expected {PATTERN_MAGIC!r}")
    height, width, patch = struct.unpack_from("<III", data, 4)
    pattern = build_pattern((height, width), patch)
    n, m = pattern.n, pattern.offdiag_count
    expected = 16 + 8 * (n + m)
    if len(data) != expected:
        raise ValueError(f"file length {len(data)} does not match header ({expected})")
    values = np.frombuffer(data, dtype="<f8", count=n + m, offset=16)
    return SparseCholesky(
        pattern=pattern, log_diag=values[:n].copy(), off_diag=values[n:].copy()
    )
