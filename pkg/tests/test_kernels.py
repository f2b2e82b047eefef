"""Compiled kernels agree with their plain numpy versions."""
import numpy as np
import pytest

from ebse import NUMBA_ENABLED, kernels, simulate
from ebse.analysis import check_lemma1
from ebse.scenario import THERMO_P, builtin_benchmark


def both(fn, *args):
    return fn(*args), fn.py_func(*args)


def close(a, b, tol=1e-12):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            close(x, y, tol)
    else:
        assert np.allclose(a, b, rtol=tol, atol=tol)


def test_flag_matches_decoration():
    assert hasattr(kernels.simulate_loop, "py_func")
    assert NUMBA_ENABLED == (kernels.simulate_loop is not kernels.simulate_loop.py_func)


@pytest.fixture(scope="module")
def sc():
    return builtin_benchmark()


def test_small_kernels(sc):
    rng = np.random.default_rng(0)
    r = rng.normal(size=5)
    for inf in (False, True):
        close(*both(kernels.vector_norm, r, inf))
    close(*both(kernels.vector_norm, np.empty(0), False))
    A = sc.model.A
    close(*both(kernels.power_ratio_sup, A, 0.99, 10_000))
    close(*both(kernels.power_norms, A, 50))
    ev = (rng.random((300, 3)) < 0.3).astype(np.float64)
    close(*both(kernels.trailing_mean, ev, 100))


def test_riccati_kernels(sc):
    A, B, C = sc.model.A, sc.model.B, sc.model.C
    I = np.eye(4)
    close(*both(kernels.riccati_filter, A, C, I, I, 1e-12, 10_000), tol=1e-9)
    close(*both(kernels.riccati_lqr, A, B, I, I, 1e-12, 100_000), tol=1e-9)


def test_subset_scan(sc):
    g, m = sc.observer_gain(), sc.model
    LC = np.ascontiguousarray(np.stack([g.block(l) @ m.C_block(l) for l in range(4)]))
    P = np.diag(THERMO_P)
    Pih = np.diag(1 / np.sqrt(THERMO_P))
    close(*both(kernels.subset_lmi_scan, m.A, LC, P, Pih), tol=1e-10)


def test_simulation_loop(sc, monkeypatch):
    s = sc.with_overrides(horizon=800, reset_period=64)
    fast = simulate.run(s)
    monkeypatch.setattr(kernels, "simulate_loop", kernels.simulate_loop.py_func)
    slow = simulate.run(s)
    for name in ("meas_trigger", "meas_delivered", "input_trigger", "reset"):
        assert np.array_equal(getattr(fast, name), getattr(slow, name)), name
    for name in ("x", "xc", "x_filt", "u", "innovation"):
        close(getattr(fast, name), getattr(slow, name), tol=1e-12)
    assert check_lemma1(s.model, s.observer_gain(), np.diag(THERMO_P)).passed
