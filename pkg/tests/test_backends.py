"""The numba kernels and the numpy reference must agree numerically."""
import numpy as np
import numpy.testing as npt
import pytest

from structcov import _backend
from structcov import _kernels_numpy as knp


def _numba_kernels():
    try:
        from structcov import _kernels_numba as knb
    except ImportError:
        pytest.skip("numba not importable")
    return knb


def test_chol_agreement():
    knb = _numba_kernels()
    rng = np.random.default_rng(101)
    for n in (1, 3, 8, 20):
        m = rng.normal(size=(n, n))
        a = m @ m.T + n * np.eye(n)
        l_np, p_np = knp.chol_factor(a)
        l_nb, p_nb = knb.chol_factor(a)
        assert p_np == p_nb == -1
        npt.assert_allclose(l_nb, l_np, rtol=1e-12, atol=1e-12)


def test_chol_failing_pivot_agreement():
    knb = _numba_kernels()
    bad = np.array([[2.0, 3.0], [3.0, 2.0]])
    _, p_np = knp.chol_factor(bad)
    _, p_nb = knb.chol_factor(bad)
    assert p_np == p_nb == 1


def test_jacobi_agreement():
    knb = _numba_kernels()
    rng = np.random.default_rng(102)
    for n in (2, 5, 9, 16):
        a = rng.normal(size=(n, n))
        a = (a + a.T) / 2.0
        w_np, v_np, _, ok_np = knp.jacobi_eigh(a, 1e-12, 100)
        w_nb, v_nb, _, ok_nb = knb.jacobi_eigh(a, 1e-12, 100)
        assert ok_np and ok_nb
        npt.assert_allclose(np.sort(w_nb), np.sort(w_np), rtol=1e-9, atol=1e-11)
        # Rotation order differs between the two sweeps, so eigenvectors are
        # only comparable through what they reconstruct.
        scale = np.max(np.abs(a))
        npt.assert_allclose(v_np @ np.diag(w_np) @ v_np.T, a, atol=1e-9 * scale)
        npt.assert_allclose(v_nb @ np.diag(w_nb) @ v_nb.T, a, atol=1e-9 * scale)


def test_schedule_covers_all_pairs_once():
    for n in (2, 3, 6, 7, 12):
        sched = knp.jacobi_schedule(n)
        seen = set()
        for rd in range(sched.shape[0]):
            for k in range(sched.shape[1]):
                p, q = sched[rd, k]
                if p < 0:
                    continue
                assert 0 <= p < q < n
                seen.add((p, q))
        assert len(seen) == n * (n - 1) // 2


def _random_banded_case(rng, b, n, m):
    ent_i = np.sort(rng.integers(1, n, size=m)).astype(np.int64)
    ent_j = np.array([rng.integers(0, i) for i in ent_i], dtype=np.int64)
    off_vals = rng.normal(size=(b, m))
    log_diag = rng.normal(0.0, 0.3, size=(b, n))
    resid = rng.normal(size=(b, n))
    return ent_i, ent_j, off_vals, log_diag, resid


def test_whiten_agreement():
    knb = _numba_kernels()
    rng = np.random.default_rng(103)
    ent_i, ent_j, off_vals, log_diag, resid = _random_banded_case(rng, 7, 12, 30)
    y_np = knp.whiten_batch(off_vals, log_diag, resid, ent_i, ent_j)
    y_nb = knb.whiten_batch(off_vals, log_diag, resid, ent_i, ent_j)
    npt.assert_allclose(y_nb, y_np, rtol=1e-12, atol=1e-13)


def test_backsub_agreement():
    knb = _numba_kernels()
    rng = np.random.default_rng(104)
    n, m = 12, 30
    ent_i, ent_j, off_vals, log_diag, u = _random_banded_case(rng, 5, n, m)
    order = np.lexsort((ent_i, ent_j)).astype(np.int64)
    col_ptr = np.searchsorted(ent_j[order], np.arange(n + 1)).astype(np.int64)
    y_np = knp.backsub_shared(off_vals[0], log_diag[0], u, ent_i, order, col_ptr)
    y_nb = knb.backsub_shared(off_vals[0], log_diag[0], u, ent_i, order, col_ptr)
    npt.assert_allclose(y_nb, y_np, rtol=1e-12, atol=1e-13)


def test_backend_switching_round_trip():
    start = _backend.active_backend()
    prev = _backend.use_backend("numpy")
    assert prev == start
    assert _backend.active_backend() == "numpy"
    assert _backend.get_kernels() is knp
    _backend.use_backend(start)
    assert _backend.active_backend() == start


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        _backend.use_backend("fortran")
