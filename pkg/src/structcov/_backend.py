"""Kernel backend selection.

The hot numeric kernels (Cholesky, Jacobi eigensolver, banded whitening and
back-substitution) exist in two interchangeable implementations: a
numba-compiled one and a pure numpy reference. The active backend is chosen
at import time from the ``STRUCTCOV_NUMBA`` environment variable:

* unset or ``"auto"``: use numba when it is importable, numpy otherwise;
* ``"0"``: force the pure numpy path;
* ``"1"``: require numba and fail loudly if it is missing.

Tests and benchmarks may switch at runtime with :func:`use_backend`.
"""
from __future__ import annotations

import os

_NUMPY = "numpy"
_NUMBA = "numba"

_active: str | None = None


def _numba_importable() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _initial_backend() -> str:
    flag = os.environ.get("STRUCTCOV_NUMBA", "auto").strip().lower()
    if flag in ("0", "false", "numpy"):
        return _NUMPY
    if flag in ("1", "true", "numba"):
        if not _numba_importable():
            raise ImportError(
                "STRUCTCOV_NUMBA=1 requires numba, which is not importable"
            )
        return _NUMBA
    return _NUMBA if _numba_importable() else _NUMPY


def active_backend() -> str:
    """Name of the backend currently serving kernels."""
    global _active
    if _active is None:
        _active = _initial_backend()
    return _active


def use_backend(name: str) -> str:
    """Switch backends at runtime; returns the previous backend name."""
    global _active
    if name not in (_NUMPY, _NUMBA):
        raise ValueError(f"unknown backend {name!r}")
    if name == _NUMBA and not _numba_importable():
        raise ImportError("numba backend requested but numba is not importable")
    previous = active_backend()
    _active = name
    return previous


def get_kernels():
    """Return the kernel module for the active backend."""
    if active_backend() == _NUMBA:
        from . import _kernels_numba

        return _kernels_numba
    from . import _kernels_numpy

    return _kernels_numpy
