import textwrap

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from ebse.analysis import check_lemma1
from ebse.scenario import (THERMO_P, ScenarioError, builtin_benchmark, dump_scenario,
                           load_scenario, save_scenario, scenario_from_dict)
from ebse.simulate import run
from ebse.trigger import MeasurementTriggerConfig

MINIMAL = """
model:
  A: [[0.5]]
gains:
  observer: {L: [[0.3]]}
"""


def write(tmp_path, text, name="s.yaml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def test_minimal_scalar_defaults(tmp_path):
    sc = load_scenario(write(tmp_path, MINIMAL))
    assert sc.measurement_trigger.norm == "two"
    assert sc.reset_period == 0
    assert sc.drop.kind == "none" and not sc.drop.active
    assert [a.role for a in sc.agents] == ["sensor", "estimator"] and sc.model.n_sensors == 1
    assert sc.horizon == 1000 and not sc.control


def test_thresholds_and_drop_round_trip(tmp_path):
    text = MINIMAL.replace("A: [[0.5]]", "A: [[0.5, 0], [0, 0.4]]\n  sensors: [[0, 1], [1, 2]]") \
        .replace("L: [[0.3]]", "L: {diag: [0.3, 0.3]}") + textwrap.dedent("""
        triggers:
          delta_est: [0.01, 0.2]
          delta_ctrl: [0.02]
        bus:
          drop: {kind: iid, prob: 0.05}
        """)
    sc = load_scenario(write(tmp_path, text))
    assert sc.measurement_trigger.delta_est == (0.01, 0.2)
    assert sc.input_trigger.delta_ctrl == (0.02,)
    assert sc.drop.drop_prob == 0.05
    save_scenario(sc, tmp_path / "again.yaml")
    back = load_scenario(tmp_path / "again.yaml")
    assert back.measurement_trigger.delta_est == (0.01, 0.2)
    assert back.input_trigger.delta_ctrl == (0.02,)
    assert back.drop.drop_prob == 0.05


def test_overlapping_partitions_name_rows(tmp_path):
    text = MINIMAL.replace("A: [[0.5]]", "A: [[0.5, 0], [0, 0.4]]\n  sensors: [[0, 2], [1, 2]]") \
        .replace("L: [[0.3]]", "L: {diag: [0.3, 0.3]}")
    with pytest.raises(ScenarioError, match=r"\[1, 2\) overlaps.*indices 1\.\.1"):
        load_scenario(write(tmp_path, text))


@pytest.mark.parametrize("edit, message", [
    (lambda r: r.update(bogus=1), "unknown top-level keys"),
    (lambda r: r.update(schema=2), "unsupported schema"),
    (lambda r: r["gains"].pop("observer"), "gains.observer is required"),
    (lambda r: r.update(triggers={"delta_est": [-0.1]}), r"delta_est\[0\].*negative"),
    (lambda r: r.update(horizon=0), "horizon"),
    (lambda r: r.update(reset_period=-1), "reset_period"),
    (lambda r: r.update(agents=[{"role": "sensor", "sensors": [3]}]), "unknown sensor channel 3"),
    (lambda r: r.update(agents=[{"role": "sensor", "sensors": [0]}, {"role": "sensor", "sensors": [0]}]),
     "assigned to agents 0 and 1"),
    (lambda r: r.update(control={"enabled": True}), "requires gains.controller"),
    (lambda r: r.update(initial={"x0": [1.0, 2.0]}), "initial.x0"),
    (lambda r: r["model"].update(A=[[1, 2], [3]]), "model.A"),
])
def test_located_errors(edit, message):
    raw = yaml.safe_load(MINIMAL)
    edit(raw)
    with pytest.raises(ScenarioError, match=message):
        scenario_from_dict(raw)


def test_invalid_yaml(tmp_path):
    with pytest.raises(ScenarioError, match="not valid YAML"):
        load_scenario(write(tmp_path, "model: [unclosed"))


def _same(a, b):
    da, db = a.to_dict(), b.to_dict()
    assert da == db
    for name in ("x0", "xhat0"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(a.model.A, b.model.A) and np.array_equal(a.model.B, b.model.B)
    assert np.array_equal(a.observer_gain().L, b.observer_gain().L)
    if a.controller is not None:
        assert np.array_equal(a.controller_gain().F, b.controller_gain().F)


def test_benchmark_round_trip(tmp_path):
    sc = builtin_benchmark()
    save_scenario(sc, tmp_path / "b.yaml")
    _same(sc, load_scenario(tmp_path / "b.yaml"))


def test_shipped_scenarios_load():
    assert load_scenario("scenarios/two-sensor.yaml").observer_gain().L.shape == (2, 2)
    _same(load_scenario("scenarios/thermo-fluid.yaml"), builtin_benchmark())


@given(st.lists(st.floats(0, 10, allow_subnormal=False), min_size=4, max_size=4),
       st.floats(0, 1), st.integers(0, 2**31), st.integers(0, 50))
def test_round_trip_property(deltas, prob, seed, K):
    sc = builtin_benchmark(seed=seed).with_overrides(
        measurement_trigger=MeasurementTriggerConfig(tuple(deltas)), reset_period=K)
    sc = sc.with_overrides(drop=sc.drop.__class__("iid", drop_prob=prob, seed=seed))
    _same(sc, scenario_from_dict(yaml.safe_load(dump_scenario(sc))))


def test_benchmark_knobs():
    sc = builtin_benchmark()
    sc.validate()
    assert sc.horizon == 10_000 and sc.model.Ts == 0.2 and sc.reset_period == 0
    assert sc.measurement_trigger.delta_est == (0.01, 0.2, 0.01, 0.2)
    assert sc.input_trigger.delta_ctrl == (0.02, 0.02)
    assert sc.drop.drop_prob == 0.05
    assert sc.drop.droppable("measurement") and not sc.drop.droppable("input")
    assert np.max(np.abs(np.linalg.eigvals(sc.model.A))) < 1
    assert check_lemma1(sc.model, sc.observer_gain(), np.diag(THERMO_P)).passed
    assert dump_scenario(builtin_benchmark()) == dump_scenario(builtin_benchmark())


def test_benchmark_full_communication_is_central():
    sc = builtin_benchmark()
    sc = sc.with_overrides(horizon=2000, drop=sc.drop.__class__("none"),
                           measurement_trigger=MeasurementTriggerConfig((0.0,) * 4),
                           input_mode="periodic")
    tr = run(sc)
    assert np.abs(tr.agent_error()).max() <= 1e-10
