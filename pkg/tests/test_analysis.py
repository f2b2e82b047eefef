import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ebse import analysis
from ebse.analysis import (check_lemma1, constructive_e_max, corollary_bounds, m_bar,
                           subset_matrix, theorem1_bound, theorem2_bound)
from ebse.model import LtiModel, NoiseSpec
from ebse.observer import ObserverGain, observer_matrix
from ebse.scenario import THERMO_P, builtin_benchmark
from ebse.simulate import run


def scalar_setup(A=1.0, L=0.5):
    m = LtiModel(A=[[A]], B=[[1.0]], C=[[1.0]])
    return m, ObserverGain.for_model(m, [[L]])


@pytest.fixture(scope="module")
def bench():
    sc = builtin_benchmark()
    return sc, sc.model, sc.observer_gain()


def test_subset_matrix_examples(bench):
    _, m, g = bench
    assert np.array_equal(subset_matrix(m, g, ()), m.A)
    assert np.allclose(subset_matrix(m, g, range(4)), observer_matrix(m, g), rtol=0, atol=1e-15)
    sm, sg = scalar_setup()
    assert subset_matrix(sm, sg, [0])[0, 0] == 0.5
    with pytest.raises(IndexError):
        subset_matrix(m, g, [4])


def _eig_oracle(m, g, P):
    """Independent per-subset eigenvalue computation."""
    worst = -np.inf
    for r in range(m.n_sensors + 1):
        for J in itertools.combinations(range(m.n_sensors), r):
            S = np.eye(m.n)
            for l in J:
                S = S - g.L[:, l:l + 1] @ m.C[l:l + 1]
            At = S @ m.A
            worst = max(worst, np.linalg.eigvalsh(At.T @ P @ At - P).max())
    return worst


def test_lemma1_surrogate_passes(bench):
    _, m, g = bench
    P = np.diag(THERMO_P)
    cert = check_lemma1(m, g, P)
    assert cert.passed and cert.checked_subsets == 16
    assert cert.max_eigenvalue_over_subsets == pytest.approx(_eig_oracle(m, g, P), rel=1e-9)
    assert cert.max_eigenvalue_over_subsets < -1e-9


def test_lemma1_examples():
    m = LtiModel(A=0.5 * np.eye(2), B=np.zeros((2, 1)), C=np.eye(2), sensor_partition=[(0, 1), (1, 2)])
    assert check_lemma1(m, ObserverGain.for_model(m, np.zeros((2, 2))), np.eye(2)).passed
    sm, sg = scalar_setup(A=2.0, L=0.9)
    cert = check_lemma1(sm, sg, [[3.0]])
    assert not cert.passed
    assert () in cert.failing_subsets and cert.worst_subset == ()


def test_lemma1_refuses_large_and_bad_P(bench):
    _, m, g = bench
    with pytest.raises(ValueError, match="positive definite"):
        check_lemma1(m, g, np.diag([1.0, 1.0, 0.0, 1.0]))
    with pytest.raises(ValueError, match="symmetric"):
        check_lemma1(m, g, np.eye(4) + np.triu(np.ones((4, 4)), 1))
    n = 21
    big = LtiModel(A=0.5 * np.eye(n), B=np.zeros((n, 1)), C=np.eye(n),
                   sensor_partition=[(i, i + 1) for i in range(n)])
    with pytest.raises(ValueError, match="refusing"):
        check_lemma1(big, ObserverGain.for_model(big, np.zeros((n, n))), np.eye(n))


@given(st.floats(1e-12, 1e-3), st.floats(1e-12, 1e-3))
def test_lemma1_monotone_in_tol(t1, t2):
    sc = builtin_benchmark()
    m, g = sc.model, sc.observer_gain()
    lo, hi = sorted((t1, t2))
    if check_lemma1(m, g, np.diag(THERMO_P), tol=hi).passed:
        assert check_lemma1(m, g, np.diag(THERMO_P), tol=lo).passed


def test_theorem1_examples():
    assert theorem1_bound(1.0, 0.5, 1.0, 0.0, 0.0) == 0.0
    assert theorem1_bound(1.0, 0.5, 1.0, 0.1, 0.0) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(ValueError):
        theorem1_bound(1.0, 1.0, 1.0, 0.1)


@given(st.floats(1, 5), st.floats(0, 0.99), st.floats(0, 3), st.floats(0, 1))
def test_theorem1_homogeneous_in_delta(m_c, rho, nL, delta):
    one = theorem1_bound(m_c, rho, nL, delta)
    two = theorem1_bound(m_c, rho, nL, 2 * delta)
    assert two == pytest.approx(2 * one, rel=1e-12, abs=1e-300)


def test_theorem2_examples():
    sm, sg = scalar_setup()
    assert m_bar(sm, sg) == 0.5
    delta = [0.3, 0.4]
    assert theorem2_bound(2.0, 0.5, 1.5, delta, 0.0, 0.7, 2, 0.0, 0.1) == pytest.approx(
        theorem1_bound(2.0, 0.5, 1.5, 0.5, 0.1), rel=1e-14)
    assert theorem2_bound(1.0, 0.5, 1.0, [0.0], 0.1, 0.5, 1, 0.2) == pytest.approx(2 * (0.1 + 0.1))
    with pytest.raises(ValueError):
        theorem2_bound(1.0, 0.5, 1.0, [0.0], -0.1, 0.5, 1, 0.2)


def test_constructive_e_max_holds_on_random_runs(bench):
    _, m, g = bench
    cert = check_lemma1(m, g, np.diag(THERMO_P))
    rng = np.random.default_rng(3)
    d = 0.01
    bound = constructive_e_max(cert, 0.05, 2 * d)
    for _ in range(5):
        e = rng.normal(size=4)
        e *= 0.05 / np.linalg.norm(e)
        worst = np.linalg.norm(e)
        for _ in range(2000):
            J = [l for l in range(4) if rng.random() < 0.5]
            dd = rng.normal(size=4)
            dd *= 2 * d * rng.random() / np.linalg.norm(dd)
            e = subset_matrix(m, g, J) @ e + dd
            worst = max(worst, np.linalg.norm(e))
        assert worst <= bound


def test_constructive_e_max_needs_certificate():
    sm, sg = scalar_setup(A=2.0)
    with pytest.raises(ValueError, match="certificate"):
        constructive_e_max(check_lemma1(sm, sg, [[1.0]]), 0.0, 1.0)


def test_corollary_examples():
    assert corollary_bounds("deterministic", 0.3, m_c=1.0, rho_c=0.5, norm_I_LC=1.0,
                            norm_L=1.0, v_max=0.0, w_max=0.0) == 0.3
    got = corollary_bounds("deterministic", 0.3, m_c=2.0, rho_c=0.5, norm_I_LC=0.5,
                           norm_L=0.25, v_max=0.1, w_max=0.2, eps_c0_norm=0.1)
    assert got == pytest.approx(0.3 + 2 * 0.1 + 4 * (0.05 + 0.05))
    assert corollary_bounds("stochastic", 0.3, zero_mean=True) == 0.3
    with pytest.raises(ValueError, match="zero-mean"):
        corollary_bounds("stochastic", 0.3)
    with pytest.raises(ValueError, match="v_max"):
        corollary_bounds("deterministic", 0.3, m_c=1.0, rho_c=0.5, norm_I_LC=1.0, norm_L=1.0, w_max=0.0)


def test_uniform_noise_deterministic_bound():
    sc = builtin_benchmark().with_overrides(
        horizon=3000, control=False, controller=None,
        drop=builtin_benchmark().drop.__class__("none"),
        process_noise=NoiseSpec("uniform", dim=4, bound=0.002, seed=5),
        measurement_noise=NoiseSpec("uniform", dim=4, bound=(0.003, 0.05, 0.003, 0.05), seed=5))
    rep = analysis.bound_report(sc)
    tr = run(sc)
    eps = np.linalg.norm(tr.estimation_error(), axis=2)
    for i in range(tr.n_agents):
        assert eps[:, i].max() <= rep.corollary1_bound[i]


def test_bound_report_recomputable(bench):
    sc, m, g = bench
    rep = analysis.bound_report(sc)
    assert rep.theorem1_e_max == pytest.approx(
        theorem1_bound(rep.m_c, rep.rho_c, rep.norm_L, float(np.linalg.norm(rep.delta_est)), rep.e_i0_norm))
    assert all(v >= 0 for v in (rep.m_c, rep.norm_L, rep.norm_I_LC, rep.m_bar))
    assert any("drops" in n for n in rep.notes)


def test_consistency_checks_on_lossy_run(bench):
    sc, m, g = bench
    tr = run(sc.with_overrides(horizon=1000, reset_period=100))
    res = analysis.consistency_checks(sc, tr)
    assert res["ok"], res


def test_closed_loop_examples():
    base = builtin_benchmark()
    perfect = base.with_overrides(
        horizon=3000, drop=base.drop.__class__("none"), input_mode="periodic",
        measurement_trigger=base.measurement_trigger.__class__((0.0,) * 4),
        process_noise=NoiseSpec("zero", dim=4), measurement_noise=NoiseSpec("zero", dim=4),
        x0=np.array([0.1, 1.0, -0.1, -1.0]), xhat0=np.array([0.1, 1.0, -0.1, -1.0]))
    tr = run(perfect)
    rep = analysis.closed_loop_check(perfect.model, perfect.controller_gain(), tr)
    assert rep.recursion_ok and rep.spectral_radius_cl < 1
    Acl = perfect.model.A + perfect.model.B @ perfect.controller_gain().F
    expect = np.linalg.matrix_power(Acl, 3000) @ perfect.x0
    assert np.allclose(tr.x[-1], expect, atol=1e-12)
    assert np.linalg.norm(tr.x[-1]) < 1e-6

    open_loop = perfect.with_overrides(controller={"F": np.zeros((4, 4))})
    tr = run(open_loop)
    assert analysis.closed_loop_check(open_loop.model, open_loop.controller_gain(), tr).recursion_ok


def test_closed_loop_needs_control(bench):
    sc, m, g = bench
    tr = run(sc.with_overrides(horizon=10, control=False))
    with pytest.raises(ValueError, match="control"):
        analysis.closed_loop_check(m, sc.controller_gain(), tr)


def test_inter_agent_error_stays_bounded(bench):
    sc, _, _ = bench
    tr = run(sc.with_overrides(horizon=10_000, input_mode="periodic", seed=2))
    e = np.linalg.norm(tr.pair_error(0, 1), axis=1)
    first, second = e[:5001].max(), e[5001:].max()
    assert second <= 2 * first
