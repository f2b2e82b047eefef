import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from ebse.agent import (AgentState, DisturbanceInjection, agent_predict, agent_update,
                        compute_control, synchronous_reset, update_input_estimate)
from ebse.model import LtiModel
from ebse.observer import (CentralEstimate, ControllerGain, ObserverGain, central_predict,
                           central_update)
from ebse.scenario import builtin_benchmark

vec4 = hnp.arrays(np.float64, 4, elements=st.floats(-10, 10))


@pytest.fixture(scope="module")
def bench():
    sc = builtin_benchmark()
    return sc.model, sc.observer_gain(), sc.controller_gain()


def test_predict_matches_central(bench):
    m, g, _ = bench
    a = AgentState.initial(0, "combined", m, [1, 2, 3, 4], sensors=(0,), input=0)
    u = np.array([0.1, -0.2, 0.3, 0.0])
    assert np.array_equal(agent_predict(m, a, u),
                          central_predict(m, g, CentralEstimate(None, a.x_filt), u))


def test_predict_without_input_frames(bench):
    m, _, _ = bench
    a = AgentState.initial(0, "estimator", m, [1, 2, 3, 4], input=0)
    assert np.array_equal(agent_predict(m, a, a.u_hat), m.A @ a.x_filt)


@given(vec4, vec4, st.floats(0, 1))
def test_input_mismatch_bound(x, direction, scale):
    m = builtin_benchmark().model
    delta = 0.02
    nrm = np.linalg.norm(direction)
    diff = direction / nrm * delta * scale if nrm > 0 else np.zeros(4)
    a = AgentState.initial(0, "estimator", m, x, input=0)
    u = np.ones(4)
    gap = np.linalg.norm(agent_predict(m, a, u) - agent_predict(m, a, u + diff))
    assert gap <= np.linalg.norm(m.B, 2) * delta * (1 + 1e-12) + 1e-15


def test_update_examples(bench):
    m, g, _ = bench
    a = AgentState.initial(0, "sensor", m, [1, 2, 3, 4], sensors=(0,))
    assert np.array_equal(agent_update(m, g, a, [], np.zeros(4)), a.x_pred)
    y = np.array([0.5, 2.5, 2.0, 4.4])
    every = [(l, m.measurement_of_sensor(y, l)) for l in range(4)]
    assert np.allclose(agent_update(m, g, a, every), central_update(m, g, a.x_pred, y),
                       rtol=1e-12, atol=1e-15)


def test_update_scalar_hand_computation():
    m = LtiModel(A=[[1.0]], B=[[1.0]], C=[[1.0]])
    g = ObserverGain.for_model(m, [[0.5]])
    a = AgentState.initial(0, "sensor", m, [1.0], sensors=(0,))
    assert agent_update(m, g, a, [(0, [3.0])], [0.1])[0] == pytest.approx(2.1, abs=1e-15)


def test_update_rejects_duplicates(bench):
    m, g, _ = bench
    a = AgentState.initial(0, "sensor", m, sensors=(0,))
    with pytest.raises(ValueError, match="twice"):
        agent_update(m, g, a, [(1, [0.0]), (1, [0.0])])


def test_reset_examples():
    assert np.array_equal(synchronous_reset([[0, 0], [2, 4]]), [[1, 2], [1, 2]])
    same = np.array([[1.5, -2.0]] * 3)
    assert np.array_equal(synchronous_reset(same), same)
    est = np.array([[0.0, 0.0], [2.0, 4.0]])
    assert np.array_equal(synchronous_reset(est, k=7, K=5), est)
    assert np.array_equal(synchronous_reset(est, k=10, K=5), [[1, 2], [1, 2]])
    assert np.array_equal(synchronous_reset(est, k=0, K=5), est)


@given(st.integers(2, 6).flatmap(
    lambda N: hnp.arrays(np.float64, (N, 3), elements=st.floats(-1e3, 1e3))))
def test_reset_consensus_and_mean(est):
    out = synchronous_reset(est)
    assert np.all(out == out[0])
    before, after = est.mean(axis=0), out.mean(axis=0)
    assert np.allclose(after, before, rtol=1e-12, atol=1e-12 * (1 + np.abs(est).max()))
    assert np.array_equal(synchronous_reset(out), out)


def test_control_examples(bench):
    m, _, F = bench
    a = AgentState.initial(0, "estimator", m, input=1)
    assert np.array_equal(compute_control(F, a), np.zeros(2))
    sm = LtiModel(A=[[1.0]], B=[[1.0]], C=[[1.0]])
    fs = ControllerGain.for_model(sm, [[-0.4]])
    b = AgentState.initial(0, "estimator", sm, [2.0], input=0)
    assert compute_control(fs, b)[0] == pytest.approx(-0.8, abs=1e-15)
    with pytest.raises(ValueError, match="computes no input"):
        compute_control(F, AgentState.initial(2, "sensor", m, sensors=(0,)))


def test_stacked_controls_equal_central(bench):
    m, _, F = bench
    x = np.array([0.1, -0.5, 0.2, 0.3])
    agents = [AgentState.initial(j, "estimator", m, x, input=j) for j in range(m.n_inputs)]
    stacked = np.concatenate([compute_control(F, a) for a in agents])
    assert np.allclose(stacked, F.F @ x, rtol=1e-12, atol=1e-15)


def test_input_estimate_examples(bench):
    m, _, _ = bench
    a = AgentState.initial(0, "combined", m, sensors=(0,), input=0)
    a.u_hat = np.array([9.0, 9.0, 5.0, 6.0])
    out = update_input_estimate(m, a, [], own_u=[1.0, 2.0])
    assert np.array_equal(out, [1, 2, 5, 6])
    out = update_input_estimate(m, a, [(0, [1.0, 2.0]), (1, [3.0, 4.0])], own_u=[1.0, 2.0])
    assert np.array_equal(out, [1, 2, 3, 4])


def test_role_validation(bench):
    m, _, _ = bench
    with pytest.raises(ValueError):
        AgentState.initial(0, "sensor", m, input=0)
    with pytest.raises(ValueError):
        AgentState.initial(0, "estimator", m, sensors=(1,))
    with pytest.raises(ValueError):
        AgentState.initial(0, "relay", m)


def test_disturbance_bounded_and_reproducible():
    inj = DisturbanceInjection(d_max=(0.1, 0.5), prob=0.7, seed=4)
    d = inj.realize(400, 2, 3)
    assert np.all(d[0] == 0)
    norms = np.linalg.norm(d, axis=2)
    assert np.all(norms[:, 0] <= 0.1 + 1e-15) and np.all(norms[:, 1] <= 0.5 + 1e-15)
    assert 0.5 < np.mean(norms[1:] > 0) < 0.9
    assert np.array_equal(d[:101], inj.realize(100, 2, 3))
    assert inj.bound(1) == 0.5


def test_disturbance_schedule():
    inj = DisturbanceInjection(schedule=((0, 1, (1.0, 0.0)), (3, 0, (0.0, 2.0))))
    d = inj.realize(5, 2, 2)
    assert np.array_equal(d[0, 1], [1, 0]) and np.array_equal(d[3, 0], [0, 2])
    assert d.sum() == 3.0
    assert inj.bound(0) == 2.0 and inj.bound(1) == 0.0
    with pytest.raises(ValueError, match="unknown agent"):
        DisturbanceInjection(schedule=((1, 5, (0.0, 0.0)),)).realize(3, 2, 2)
