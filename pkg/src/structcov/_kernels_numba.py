"""Numba-compiled hot kernels. Mirrors ``_kernels_numpy`` one to one."""
from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _schedule(n):
    # Round-robin pair ordering, identical to _kernels_numpy.jacobi_schedule.
    m = n + (n & 1)
    rounds = m - 1
    half = m // 2
    out = np.empty((rounds, half, 2), dtype=np.int64)
    arr = np.empty(m, dtype=np.int64)
    for i in range(m):
        arr[i] = i
    for rd in range(rounds):
        for i in range(half):
            p = arr[i]
            q = arr[m - 1 - i]
            if p >= n or q >= n:
                out[rd, i, 0] = -1
                out[rd, i, 1] = -1
            elif p < q:
                out[rd, i, 0] = p
                out[rd, i, 1] = q
            else:
                out[rd, i, 0] = q
                out[rd, i, 1] = p
        last = arr[m - 1]
        for i in range(m - 1, 1, -1):
            arr[i] = arr[i - 1]
        arr[1] = last
    return out


@njit(cache=True)
def chol_factor(a):
    n = a.shape[0]
    lower = np.zeros((n, n), dtype=np.float64)
    for j in range(n):
        d = a[j, j]
        for k in range(j):
            d -= lower[j, k] * lower[j, k]
        if not (d > 0.0) or not np.isfinite(d):
            return lower, j
        lower[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            acc = a[i, j]
            for k in range(j):
                acc -= lower[i, k] * lower[j, k]
            lower[i, j] = acc / lower[j, j]
    return lower, -1


@njit(cache=True)
def jacobi_eigh(a, rel_tol, max_sweeps):
    n = a.shape[0]
    work = a.copy()
    vecs = np.eye(n)
    base = 0.0
    for i in range(n):
        for j in range(n):
            base += work[i, j] * work[i, j]
    base = np.sqrt(base)
    if n < 2 or base == 0.0:
        return np.diag(work).copy(), vecs, 0.0, True
    tol = rel_tol * base
    sched = _schedule(n)
    off = 0.0
    for _ in range(max_sweeps):
        for rd in range(sched.shape[0]):
            for kk in range(sched.shape[1]):
                p = sched[rd, kk, 0]
                q = sched[rd, kk, 1]
                if p < 0:
                    continue
                apq = work[p, q]
                if apq == 0.0:
                    continue
                app = work[p, p]
                aqq = work[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if tau == 0.0:
                    t = 1.0
                elif tau > 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for i in range(n):
                    aip = work[p, i]
                    aiq = work[q, i]
                    work[p, i] = c * aip - s * aiq
                    work[q, i] = s * aip + c * aiq
                for i in range(n):
                    aip = work[i, p]
                    aiq = work[i, q]
                    work[i, p] = c * aip - s * aiq
                    work[i, q] = s * aip + c * aiq
                work[p, p] = app - t * apq
                work[q, q] = aqq + t * apq
                work[p, q] = 0.0
                work[q, p] = 0.0
                for i in range(n):
                    vip = vecs[i, p]
                    viq = vecs[i, q]
                    vecs[i, p] = c * vip - s * viq
                    vecs[i, q] = s * vip + c * viq
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * work[i, j] * work[i, j]
        off = np.sqrt(off)
        if off <= tol:
            return np.diag(work).copy(), vecs, off, True
    return np.diag(work).copy(), vecs, off, False


@njit(cache=True, parallel=True)
def whiten_batch(off_vals, log_diag, resid, ent_i, ent_j):
    b, n = resid.shape
    m = ent_i.shape[0]
    y = np.empty((b, n), dtype=np.float64)
    for r in prange(b):
        for j in range(n):
            y[r, j] = resid[r, j] * np.exp(log_diag[r, j])
        for e in range(m):
            y[r, ent_j[e]] += off_vals[r, e] * resid[r, ent_i[e]]
    return y


@njit(cache=True, parallel=True)
def backsub_shared(off_vals, log_diag, u, ent_i, col_order, col_ptr):
    b, n = u.shape
    y = np.empty((b, n), dtype=np.float64)
    for r in prange(b):
        for j in range(n - 1, -1, -1):
            acc = u[r, j]
            for kk in range(col_ptr[j], col_ptr[j + 1]):
                e = col_order[kk]
                acc -= off_vals[e] * y[r, ent_i[e]]
            y[r, j] = acc * np.exp(-log_diag[j])
    return y
