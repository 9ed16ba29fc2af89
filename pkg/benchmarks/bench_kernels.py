#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure numpy reference backend.

Runs the four hot kernels (dense Cholesky, Jacobi eigendecomposition, banded
whitening, banded back substitution) through the public API under both
backends and reports the best-of-N wall time per call. The same comparison
can be forced process-wide with the STRUCTCOV_NUMBA environment variable;
this script switches at runtime instead so both backends see identical
inputs.

    python3 benchmarks/bench_kernels.py --grid 16 --patch 5 --batch 64
"""
import argparse
import time

import numpy as np

from structcov._backend import use_backend
from structcov.gaussian import chol_factor, sym_eigen
from structcov.sparse import (
    SparseCholesky,
    build_pattern,
    sample_sparse,
    whiten_batch,
)


def best_of(fn, repeats: int) -> float:
    fn()  # warmup; compiles the numba kernel on first use
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def build_cases(grid: int, patch: int, batch: int):
    rng = np.random.default_rng(0)
    n = grid * grid
    pattern = build_pattern((grid, grid), patch)

    b = rng.standard_normal((n, n))
    spd = b @ b.T + n * np.eye(n)
    sym = 0.5 * (b + b.T)

    off = 0.3 * rng.standard_normal((batch, pattern.offdiag_count))
    log_diag = 0.2 * rng.standard_normal((batch, n))
    resid = rng.standard_normal((batch, n))

    sc = SparseCholesky(pattern=pattern, off_diag=off[0], log_diag=log_diag[0])
    mean = np.zeros(n)
    u = rng.standard_normal((batch, n))

    return [
        (f"cholesky ({n}x{n})", lambda: chol_factor(spd)),
        (f"jacobi eigh ({n}x{n})", lambda: sym_eigen(sym)),
        (f"whiten batch ({batch}x{n})", lambda: whiten_batch(pattern, off, log_diag, resid)),
        (f"backsub ({batch}x{n})", lambda: sample_sparse(sc, mean, u)),
    ]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--grid", type=int, default=16, help="grid side length")
    parser.add_argument("--patch", type=int, default=5, help="neighborhood size (odd)")
    parser.add_argument("--batch", type=int, default=64, help="batch size for banded kernels")
    parser.add_argument("--repeats", type=int, default=5, help="timed repeats per kernel")
    args = parser.parse_args(argv)

    cases = build_cases(args.grid, args.patch, args.batch)
    results = {}
    for backend in ("numpy", "numba"):
        try:
            use_backend(backend)
        except ImportError as exc:
            print(f"skipping {backend}: {exc}")
            continue
        for name, fn in cases:
            results.setdefault(name, {})[backend] = best_of(fn, args.repeats)

    width = max(len(name) for name, _ in cases)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, _ in cases:
        timing = results[name]
        np_ms = timing.get("numpy", float("nan")) * 1e3
        nb_ms = timing.get("numba", float("nan")) * 1e3
        ratio = np_ms / nb_ms if nb_ms else float("nan")
        print(f"{name:<{width}}  {np_ms:>8.3f}ms  {nb_ms:>8.3f}ms  {ratio:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
