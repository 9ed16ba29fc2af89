"""Pure numpy reference implementations of the hot kernels.

Mirrors ``_kernels_numba`` function for function; both backends must agree
to floating-point tolerance (not bitwise, the reduction orders differ).
"""
from __future__ import annotations

import numpy as np


def jacobi_schedule(n: int) -> np.ndarray:
    """Round-robin ordering of all index pairs below ``n``.

    Returns an int64 array of shape (rounds, n_pad // 2, 2). Pairs within a
    round are disjoint, so their plane rotations commute and can be applied
    together. Padding slots (odd ``n``) are marked with -1.
    """
    m = n + (n & 1)
    rounds = m - 1
    half = m // 2
    out = np.empty((rounds, half, 2), dtype=np.int64)
    arr = list(range(m))
    for rd in range(rounds):
        for i in range(half):
            p, q = arr[i], arr[m - 1 - i]
            if p >= n or q >= n:
                out[rd, i] = (-1, -1)
            else:
                out[rd, i] = (p, q) if p < q else (q, p)
        arr = [arr[0], arr[-1]] + arr[1:-1]
    return out


def chol_factor(a: np.ndarray):
    """Lower Cholesky factor of ``a``; returns (L, pivot).

    pivot is -1 on success, otherwise the index of the first
    non-positive pivot encountered.
    """
    n = a.shape[0]
    lower = np.zeros((n, n), dtype=np.float64)
    for j in range(n):
        d = a[j, j] - lower[j, :j] @ lower[j, :j]
        if not (d > 0.0) or not np.isfinite(d):
            return lower, j
        lower[j, j] = np.sqrt(d)
        if j + 1 < n:
            lower[j + 1:, j] = (a[j + 1:, j] - lower[j + 1:, :j] @ lower[j, :j]) / lower[j, j]
    return lower, -1


def jacobi_eigh(a: np.ndarray, rel_tol: float, max_sweeps: int):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    One sweep visits every off-diagonal pair once, in round-robin order so
    that each round's rotations act on disjoint planes and vectorize.
    Returns (eigenvalues, eigenvectors, off_norm, converged); eigenvalues are
    in diagonal order, not sorted.
    """
    n = a.shape[0]
    work = np.array(a, dtype=np.float64)
    vecs = np.eye(n)
    base = np.sqrt(np.sum(work * work))
    if n < 2 or base == 0.0:
        return np.diag(work).copy(), vecs, 0.0, True
    tol = rel_tol * base
    schedule = jacobi_schedule(n)
    off = np.inf
    for _ in range(max_sweeps):
        for rd in range(schedule.shape[0]):
            pp = schedule[rd, :, 0]
            qq = schedule[rd, :, 1]
            keep = pp >= 0
            pp, qq = pp[keep], qq[keep]
            app = work[pp, pp]
            aqq = work[qq, qq]
            apq = work[pp, qq]
            act = apq != 0.0
            if not np.any(act):
                continue
            pp, qq = pp[act], qq[act]
            app, aqq, apq = app[act], aqq[act], apq[act]
            tau = (aqq - app) / (2.0 * apq)
            t = np.where(
                tau == 0.0,
                1.0,
                np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau)),
            )
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rows_p = work[pp, :].copy()
            rows_q = work[qq, :].copy()
            work[pp, :] = c[:, None] * rows_p - s[:, None] * rows_q
            work[qq, :] = s[:, None] * rows_p + c[:, None] * rows_q
            cols_p = work[:, pp].copy()
            cols_q = work[:, qq].copy()
            work[:, pp] = cols_p * c - cols_q * s
            work[:, qq] = cols_p * s + cols_q * c
            # The rotated (p,p), (q,q), (p,q) entries have closed forms;
            # writing them directly keeps the matrix exactly symmetric.
            work[pp, pp] = app - t * apq
            work[qq, qq] = aqq + t * apq
            work[pp, qq] = 0.0
            work[qq, pp] = 0.0
            vp = vecs[:, pp].copy()
            vq = vecs[:, qq].copy()
            vecs[:, pp] = vp * c - vq * s
            vecs[:, qq] = vp * s + vq * c
        off = np.sqrt(max(np.sum(work * work) - np.sum(np.diag(work) ** 2), 0.0))
        if off <= tol:
            return np.diag(work).copy(), vecs, float(off), True
    return np.diag(work).copy(), vecs, float(off), False


def whiten_batch(off_vals, log_diag, resid, ent_i, ent_j):
    """y = L^T r for a batch of banded factors sharing one pattern.

    off_vals (B, M) strictly-lower values, log_diag (B, N), resid (B, N).
    ent_i / ent_j (M,) give each stored entry's (row, col).
    """
    b, n = resid.shape
    y = resid * np.exp(log_diag)
    m = ent_i.shape[0]
    if m:
        contrib = off_vals * resid[:, ent_i]
        flat = (np.arange(b)[:, None] * n + ent_j[None, :]).ravel()
        y += np.bincount(flat, weights=contrib.ravel(), minlength=b * n).reshape(b, n)
    return y


def backsub_shared(off_vals, log_diag, u, ent_i, col_order, col_ptr):
    """Solve L^T y = u for one banded factor and a batch of right sides.

    Back substitution from the last coordinate; col_order/col_ptr group the
    stored entries by column so each step touches only that column's rows.
    """
    b, n = u.shape
    y = np.empty_like(u)
    inv_diag = np.exp(-log_diag)
    for j in range(n - 1, -1, -1):
        lo, hi = col_ptr[j], col_ptr[j + 1]
        acc = u[:, j]
        if hi > lo:
            sel = col_order[lo:hi]
            acc = acc - y[:, ent_i[sel]] @ off_vals[sel]
        y[:, j] = acc * inv_diag[j]
    return y
