"""Compiled and numpy kernels must agree; both are exercised through ``kernel_module``."""
import os

import numpy as np
import pytest

from lowrank_wd import _backend, _fallback

try:
    from lowrank_wd import _kernels
except ImportError:  # extension not built
    _kernels = None


def problem(seed, m=9, n=4, N=40):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=m), rng.normal(size=(m, n)), rng.normal(size=m) * 0.1,
            rng.normal(size=(N, n)), rng.normal(size=N), rng.uniform(0.1, 2.0, size=N))


def test_jacobi_orthogonalises_rows(kernel_module, rng):
    a = rng.normal(size=(5, 11))
    w = a.copy()
    sweeps, ok = kernel_module.jacobi_sweeps(w, 1e-12, 100)
    assert ok and sweeps >= 1
    gram = w @ w.T
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) < 1e-10
    np.testing.assert_allclose(np.sort(np.diag(gram)), np.sort(np.linalg.eigvalsh(a @ a.T)),
                               rtol=1e-10)


def test_jacobi_reports_budget_exhaustion(kernel_module, rng):
    w = rng.normal(size=(6, 6))
    sweeps, ok = kernel_module.jacobi_sweeps(w, 1e-12, 1)
    assert sweeps == 1 and not ok


def test_batch_gradient_shapes(kernel_module):
    u, v, b, x, y, g = problem(0)
    du, dv, db = kernel_module.batch_gradient(u, v, b, x[:5], y[:5], g[:5], 0.1, 0.2)
    assert du.shape == (9,) and dv.shape == (9, 4) and db.shape == (9,)


@pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")
def test_backends_agree_on_batch_gradient():
    for seed in range(20):
        u, v, b, x, y, g = problem(seed)
        a = _fallback.batch_gradient(u, v, b, x[:8], y[:8], g[:8], 0.01, 0.02)
        c = _kernels.batch_gradient(u, v, b, x[:8], y[:8], g[:8], 0.01, 0.02)
        for p, q in zip(a, c):
            np.testing.assert_allclose(p, q, rtol=1e-12, atol=1e-14)


@pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")
def test_backends_agree_on_sgd_epoch():
    u, v, b, x, y, g = problem(3)
    order = np.random.default_rng(1).permutation(40)[:40].astype(np.int_)
    states = []
    for mod in (_fallback, _kernels):
        uu, vv, bb = u.copy(), v.copy(), b.copy()
        norms = mod.sgd_epoch(uu, vv, bb, x, y, g, order, 8, 0.01, 1e-3, 1e-3)
        states.append((uu, vv, bb, norms))
    for p, q in zip(*states):
        np.testing.assert_allclose(p, q, rtol=1e-11, atol=1e-13)


@pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")
def test_backends_agree_on_jacobi():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(7, 13))
    w1, w2 = a.copy(), a.copy()
    _fallback.jacobi_sweeps(w1, 1e-12, 100)
    _kernels.jacobi_sweeps(w2, 1e-12, 100)
    np.testing.assert_allclose(np.sort(np.linalg.norm(w1, axis=1)),
                               np.sort(np.linalg.norm(w2, axis=1)), rtol=1e-12)


def test_sgd_epoch_uses_pre_step_parameters(kernel_module):
    u, v, b, x, y, g = problem(5)
    order = np.arange(16, dtype=np.int_)
    uu, vv, bb = u.copy(), v.copy(), b.copy()
    kernel_module.sgd_epoch(uu, vv, bb, x, y, g, order, 8, 0.05, 0.0, 0.0)
    # replay by hand
    for start in (0, 8):
        rows = order[start:start + 8]
        du, dv, db = kernel_module.batch_gradient(u, v, b, x[rows], y[rows], g[rows], 0.0, 0.0)
        u, v, b = u - 0.05 * du, v - 0.05 * dv, b - 0.05 * db
    np.testing.assert_allclose(vv, v, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(uu, u, rtol=1e-13, atol=1e-15)


def test_backend_selection():
    assert _backend.BACKEND in ("cython", "python")
    forced = os.environ.get("LOWRANK_WD_PURE_PYTHON", "") in ("1", "true", "yes")
    if _kernels is not None and not forced:
        assert _backend.BACKEND == "cython"
