"""Scenario definition, YAML ingestion and the built-in thermo-fluid benchmark.

The file format is documented in ``docs/scenario-format.md``.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .agent import DisturbanceInjection
from .bus import DropModel
from .model import LtiModel, NoiseSpec
from .observer import ControllerGain, ObserverGain, design_kalman_gain, design_lqr_gain
from .trigger import InputTriggerConfig, MeasurementTriggerConfig

SCHEMA_VERSION = 1
INPUT_MODES = ("periodic", "event")


class ScenarioError(ValueError):
    """Schema or consistency violation; the message names the offending key."""


@dataclass(frozen=True)
class AgentSpec:
    role: str
    sensors: tuple = ()
    input: int = None

    def to_dict(self):
        out = {"role": self.role, "sensors": list(self.sensors)}
        if self.input is not None:
            out["input"] = self.input
        return out


@dataclass(eq=False)
class Scenario:
    model: LtiModel
    agents: list
    observer: dict
    measurement_trigger: MeasurementTriggerConfig
    process_noise: NoiseSpec = None
    measurement_noise: NoiseSpec = None
    controller: dict = None
    input_trigger: InputTriggerConfig = None
    drop: DropModel = field(default_factory=DropModel)
    capacity: int = None
    reset_period: int = 0
    control: bool = False
    input_mode: str = "periodic"
    horizon: int = 1000
    seed: int = 0
    disturbance: DisturbanceInjection = field(default_factory=DisturbanceInjection)
    x0: np.ndarray = None
    xhat0: np.ndarray = None
    lyapunov_P: np.ndarray = None
    name: str = "scenario"

    def __post_init__(self):
        m = self.model
        if self.process_noise is None:
            self.process_noise = NoiseSpec(dim=m.n, seed=self.seed)
        if self.measurement_noise is None:
            self.measurement_noise = NoiseSpec(dim=m.p, seed=self.seed)
        if self.input_trigger is None:
            self.input_trigger = InputTriggerConfig((0.0,) * m.n_inputs)
        self.x0 = np.zeros(m.n) if self.x0 is None else np.asarray(self.x0, float).reshape(-1)
        self.xhat0 = np.zeros(m.n) if self.xhat0 is None else np.asarray(self.xhat0, float).reshape(-1)
        self.agents = [a if isinstance(a, AgentSpec) else AgentSpec(**a) for a in self.agents]
        self._gains = {}
        self.validate()

    # -- validation -------------------------------------------------------
    def validate(self):
        m = self.model
        if self.horizon < 1:
            raise ScenarioError(f"horizon must be >= 1, got {self.horizon}")
        if self.reset_period < 0:
            raise ScenarioError(f"reset_period must be 0 (disabled) or >= 1, got {self.reset_period}")
        if self.input_mode not in INPUT_MODES:
            raise ScenarioError(f"control.inputs must be one of {INPUT_MODES}, got {self.input_mode!r}")
        if self.process_noise.dim != m.n:
            raise ScenarioError(f"noise.process has dimension {self.process_noise.dim}, expected n={m.n}")
        if self.measurement_noise.dim != m.p:
            raise ScenarioError(f"noise.measurement has dimension {self.measurement_noise.dim}, expected p={m.p}")
        if len(self.measurement_trigger.delta_est) != m.n_sensors:
            raise ScenarioError(
                f"triggers.delta_est has {len(self.measurement_trigger.delta_est)} entries "
                f"for {m.n_sensors} sensor channels")
        if len(self.input_trigger.delta_ctrl) != m.n_inputs:
            raise ScenarioError(
                f"triggers.delta_ctrl has {len(self.input_trigger.delta_ctrl)} entries "
                f"for {m.n_inputs} input groups")
        for name, vec in (("initial.x0", self.x0), ("initial.xhat0", self.xhat0)):
            if vec.shape != (m.n,):
                raise ScenarioError(f"{name} has dimension {vec.size}, expected n={m.n}")
        if not self.agents:
            raise ScenarioError("at least one agent is required")
        owner = {}
        inputs = {}
        for idx, a in enumerate(self.agents):
            if a.role not in ("sensor", "estimator", "combined"):
                raise ScenarioError(f"agents[{idx}].role {a.role!r} unknown")
            if a.role == "estimator" and a.sensors:
                raise ScenarioError(f"agents[{idx}] is an estimator but lists sensors {list(a.sensors)}")
            if a.role == "sensor" and a.input is not None:
                raise ScenarioError(f"agents[{idx}] is a sensor but computes input {a.input}")
            for s in a.sensors:
                if not 0 <= s < m.n_sensors:
                    raise ScenarioError(f"agents[{idx}] names unknown sensor channel {s}")
                if s in owner:
                    raise ScenarioError(f"sensor channel {s} assigned to agents {owner[s]} and {idx}")
                owner[s] = idx
            if a.input is not None:
                if not 0 <= a.input < m.n_inputs:
                    raise ScenarioError(f"agents[{idx}] names unknown input group {a.input}")
                if a.input in inputs:
                    raise ScenarioError(f"input group {a.input} assigned to agents {inputs[a.input]} and {idx}")
                inputs[a.input] = idx
        missing = sorted(set(range(m.n_sensors)) - set(owner))
        if missing:
            raise ScenarioError(f"sensor channels {missing} have no owning agent")
        if self.control:
            if self.controller is None:
                raise ScenarioError("control.enabled requires gains.controller")
            missing = sorted(set(range(m.n_inputs)) - set(inputs))
            if missing:
                raise ScenarioError(f"control enabled but input groups {missing} have no owning agent")
        if self.lyapunov_P is not None:
            P = np.asarray(self.lyapunov_P, float)
            if P.shape != (m.n, m.n):
                raise ScenarioError(f"analysis.P has shape {P.shape}, expected {(m.n, m.n)}")
        if self.capacity is not None and self.capacity < 1:
            raise ScenarioError("bus.capacity must be >= 1")
        self._check_gain_spec("gains.observer", self.observer, ("L", "kalman"))
        if self.controller is not None:
            self._check_gain_spec("gains.controller", self.controller, ("F", "lqr"))

    @staticmethod
    def _check_gain_spec(name, spec, keys):
        if not isinstance(spec, dict) or len(spec) != 1 or next(iter(spec)) not in keys:
            raise ScenarioError(f"{name} must have exactly one of {keys}")

    # -- derived quantities ----------------------------------------------
    @property
    def n_agents(self):
        return len(self.agents)

    @property
    def sensor_owner(self):
        owner = [0] * self.model.n_sensors
        for idx, a in enumerate(self.agents):
            for s in a.sensors:
                owner[s] = idx
        return owner

    @property
    def input_owner(self):
        owner = [-1] * self.model.n_inputs
        for idx, a in enumerate(self.agents):
            if a.input is not None:
                owner[a.input] = idx
        return owner

    def observer_gain(self):
        if "observer" not in self._gains:
            spec = self.observer
            if "L" in spec:
                gain = ObserverGain.for_model(self.model, spec["L"])
            else:
                gain = design_kalman_gain(self.model, spec["kalman"]["Q"], spec["kalman"]["R"])
            self._gains["observer"] = gain
        return self._gains["observer"]

    def controller_gain(self):
        if self.controller is None:
            return ControllerGain.for_model(self.model, np.zeros((self.model.q, self.model.n)))
        if "controller" not in self._gains:
            spec = self.controller
            if "F" in spec:
                gain = ControllerGain.for_model(self.model, spec["F"])
            else:
                gain = design_lqr_gain(self.model, spec["lqr"]["Q"], spec["lqr"]["R"])
            self._gains["controller"] = gain
        return self._gains["controller"]

    def lyapunov_matrix(self):
        if self.lyapunov_P is None:
            return np.eye(self.model.n)
        return np.asarray(self.lyapunov_P, float)

    def with_overrides(self, seed=None, horizon=None, **changes):
        """Copy with a new master seed (applied to every random source) and/or horizon."""
        if seed is not None:
            changes.update(
                seed=seed,
                process_noise=replace(self.process_noise, seed=seed),
                measurement_noise=replace(self.measurement_noise, seed=seed),
                drop=replace(self.drop, seed=seed),
                disturbance=replace(self.disturbance, seed=seed),
            )
        if horizon is not None:
            changes["horizon"] = horizon
        fields = {f: getattr(self, f) for f in self.__dataclass_fields__}
        fields.update(changes)
        return Scenario(**fields)

    # -- serialization ---------------------------------------------------
    def to_dict(self):
        out = {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "model": self.model.to_dict(),
            "noise": {
                "process": self.process_noise.to_dict(),
                "measurement": self.measurement_noise.to_dict(),
            },
            "gains": {"observer": _gain_to_dict(self.observer)},
            "triggers": {
                "norm": self.measurement_trigger.norm,
                "delta_est": list(self.measurement_trigger.delta_est),
                "input_norm": self.input_trigger.norm,
                "delta_ctrl": list(self.input_trigger.delta_ctrl),
            },
            "bus": {
                "drop": {
                    "kind": self.drop.kind,
                    "prob": self.drop.drop_prob,
                    "scope": self.drop.scope,
                    "seed": self.drop.seed,
                    "exempt": sorted(self.drop.exempt_kinds),
                },
                "capacity": self.capacity,
            },
            "agents": [a.to_dict() for a in self.agents],
            "reset_period": self.reset_period,
            "control": {"enabled": self.control, "inputs": self.input_mode},
            "disturbance": {
                "schedule": [[k, a, list(v)] for k, a, v in self.disturbance.schedule],
                "d_max": list(self.disturbance.d_max),
                "prob": self.disturbance.prob,
                "seed": self.disturbance.seed,
            },
            "initial": {"x0": self.x0.tolist(), "xhat0": self.xhat0.tolist()},
            "horizon": self.horizon,
            "seed": self.seed,
        }
        if self.controller is not None:
            out["gains"]["controller"] = _gain_to_dict(self.controller)
        if self.lyapunov_P is not None:
            out["analysis"] = {"P": np.asarray(self.lyapunov_P, float).tolist()}
        return out


def _gain_to_dict(spec):
    key, value = next(iter(spec.items()))
    if key in ("L", "F"):
        return {key: np.asarray(value, float).tolist()}
    return {key: {k: np.asarray(v, float).tolist() for k, v in value.items()}}


# -- loading -----------------------------------------------------------------

def _matrix(value, where):
    if isinstance(value, dict):
        if set(value) != {"diag"}:
            raise ScenarioError(f"{where}: matrix mapping must be {{diag: [...]}}")
        return np.diag(np.asarray(value["diag"], dtype=np.float64))
    try:
        arr = np.array(value, dtype=np.float64, ndmin=2)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: not a numeric matrix ({exc})") from None
    if arr.ndim != 2:
        raise ScenarioError(f"{where}: matrix rows must have equal length")
    return arr


def _take(section, key, where, default=None, required=False):
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    if key not in section:
        if required:
            raise ScenarioError(f"{where}.{key} is required")
        return default
    return section[key]


def _noise(raw, dim, seed, where):
    if raw is None:
        return NoiseSpec(dim=dim, seed=seed)
    kind = _take(raw, "kind", where, "zero")
    try:
        return NoiseSpec(
            kind=kind,
            dim=int(_take(raw, "dim", where, dim)),
            bound=tuple(np.ravel(_take(raw, "bound", where, ()))),
            variance=tuple(np.ravel(_take(raw, "variance", where, ()))),
            windows=tuple(tuple(w) for w in _take(raw, "windows", where, ())),
            seed=int(_take(raw, "seed", where, seed)),
        )
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _gain_spec(raw, where, direct, design):
    if raw is None:
        return None
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ScenarioError(f"{where} must have exactly one of {direct!r}, {design!r}")
    key, value = next(iter(raw.items()))
    if key == direct:
        return {direct: _matrix(value, f"{where}.{direct}")}
    if key == design:
        return {design: {k: _matrix(_take(value, k, f"{where}.{design}", required=True),
                                    f"{where}.{design}.{k}") for k in ("Q", "R")}}
    raise ScenarioError(f"{where}: unknown key {key!r}")


def _thresholds(raw, count, default, where):
    if raw is None:
        return (default,) * count
    vals = np.atleast_1d(np.asarray(raw, dtype=np.float64))
    if vals.size == 1 and count > 1:
        vals = np.repeat(vals, count)
    if vals.size != count:
        raise ScenarioError(f"{where} has {vals.size} entries, expected {count}")
    for i, v in enumerate(vals):
        if np.isnan(v) or v < 0:
            raise ScenarioError(f"{where}[{i}] = {v} is negative")
    return tuple(float(v) for v in vals)


def scenario_from_dict(raw):
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must contain a mapping at top level")
    version = raw.get("schema", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema version {version!r} (supported: {SCHEMA_VERSION})")
    known = {"schema", "name", "model", "noise", "gains", "triggers", "bus", "agents",
             "reset_period", "control", "disturbance", "initial", "horizon", "seed", "analysis"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ScenarioError(f"unknown top-level keys {unknown}")
    seed = int(raw.get("seed", 0))

    mraw = _take(raw, "model", "scenario", required=True)
    A = _matrix(_take(mraw, "A", "model", required=True), "model.A")
    n = A.shape[0]
    C = _matrix(_take(mraw, "C", "model", np.eye(n)), "model.C")
    B_raw = _take(mraw, "B", "model")
    B = _matrix(B_raw, "model.B") if B_raw is not None else np.zeros((n, 1))
    try:
        model = LtiModel(
            A=A, B=B, C=C,
            sensor_partition=_take(mraw, "sensors", "model"),
            input_partition=_take(mraw, "inputs", "model"),
            Ts=float(_take(mraw, "Ts", "model", 1.0)),
        )
    except ValueError as exc:
        raise ScenarioError(f"model: {exc}") from None

    noise = raw.get("noise") or {}
    process = _noise(_take(noise, "process", "noise"), model.n, seed, "noise.process")
    measurement = _noise(_take(noise, "measurement", "noise"), model.p, seed, "noise.measurement")

    gains = raw.get("gains") or {}
    observer = _gain_spec(_take(gains, "observer", "gains", required=True), "gains.observer", "L", "kalman")
    controller = _gain_spec(_take(gains, "controller", "gains"), "gains.controller", "F", "lqr")

    trig = raw.get("triggers") or {}
    try:
        mtrig = MeasurementTriggerConfig(
            _thresholds(_take(trig, "delta_est", "triggers"), model.n_sensors, 0.0, "triggers.delta_est"),
            norm=_take(trig, "norm", "triggers", "two"))
        itrig = InputTriggerConfig(
            _thresholds(_take(trig, "delta_ctrl", "triggers"), model.n_inputs, 0.0, "triggers.delta_ctrl"),
            norm=_take(trig, "input_norm", "triggers", _take(trig, "norm", "triggers", "two")))
    except ValueError as exc:
        raise ScenarioError(f"triggers: {exc}") from None

    bus = raw.get("bus") or {}
    draw = _take(bus, "drop", "bus") or {}
    try:
        drop = DropModel(
            kind=_take(draw, "kind", "bus.drop", "none"),
            drop_prob=float(_take(draw, "prob", "bus.drop", 0.0)),
            scope=_take(draw, "scope", "bus.drop", "per_receiver"),
            seed=int(_take(draw, "seed", "bus.drop", seed)),
            exempt_kinds=frozenset(_take(draw, "exempt", "bus.drop", ("input", "reset_estimate"))),
        )
    except ValueError as exc:
        raise ScenarioError(f"bus.drop: {exc}") from None
    capacity = _take(bus, "capacity", "bus")

    agents_raw = raw.get("agents")
    if agents_raw is None:
        agents = [AgentSpec("sensor", (s,)) for s in range(model.n_sensors)]
        agents += [AgentSpec("estimator", (), j) for j in range(model.n_inputs)]
    else:
        agents = []
        for idx, a in enumerate(agents_raw):
            where = f"agents[{idx}]"
            agents.append(AgentSpec(
                role=_take(a, "role", where, required=True),
                sensors=tuple(int(s) for s in _take(a, "sensors", where, ())),
                input=_take(a, "input", where),
            ))

    ctrl = raw.get("control") or {}
    dist = raw.get("disturbance") or {}
    try:
        disturbance = DisturbanceInjection(
            schedule=tuple(tuple(e) for e in _take(dist, "schedule", "disturbance", ())),
            d_max=tuple(_take(dist, "d_max", "disturbance", ())),
            prob=float(_take(dist, "prob", "disturbance", 1.0)),
            seed=int(_take(dist, "seed", "disturbance", seed)),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"disturbance: {exc}") from None
    init = raw.get("initial") or {}
    analysis = raw.get("analysis") or {}
    P_raw = _take(analysis, "P", "analysis")

    return Scenario(
        name=str(raw.get("name", "scenario")),
        model=model,
        agents=agents,
        observer=observer,
        controller=controller,
        measurement_trigger=mtrig,
        input_trigger=itrig,
        process_noise=process,
        measurement_noise=measurement,
        drop=drop,
        capacity=None if capacity is None else int(capacity),
        reset_period=int(raw.get("reset_period", 0)),
        control=bool(_take(ctrl, "enabled", "control", False)),
        input_mode=_take(ctrl, "inputs", "control", "periodic"),
        horizon=int(raw.get("horizon", 1000)),
        seed=seed,
        disturbance=disturbance,
        x0=_take(init, "x0", "initial"),
        xhat0=_take(init, "xhat0", "initial"),
        lyapunov_P=None if P_raw is None else _matrix(P_raw, "analysis.P"),
    )


def load_scenario(path):
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not valid YAML ({exc})") from None
    return scenario_from_dict(raw)


def dump_scenario(scenario):
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False, default_flow_style=None)


def save_scenario(scenario, path):
    Path(path).write_text(dump_scenario(scenario))


# -- built-in benchmark ------------------------------------------------------

# Surrogate two-tank thermo-fluid plant, states (level 1 [m], temperature 1
# [K], level 2 [m], temperature 2 [K]) and inputs (inflow 1, cooling 1,
# inflow 2, heating 2), all deviations from the operating point. Values are
# chosen by hand: stable, weakly coupled through cross-flows, temperatures
# never feed back into levels. With P = diag(500, 1, 500, 1) every subset
# matrix contracts, see tests/test_scenario.py.
THERMO_A = [
    [0.9950, 0.0000, 0.0030, 0.0000],
    [0.0100, 0.9800, 0.0000, 0.0040],
    [0.0030, 0.0000, 0.9940, 0.0000],
    [0.0000, 0.0040, 0.0120, 0.9820],
]
# Actuators are weak per step (normalized inputs, 0.2 s sampling). This keeps
# the stale-input mismatch between agents, at most ||B_j|| * delta_ctrl per
# step, small next to the error jumps caused by lost measurements.
THERMO_B = [
    [0.0005, 0.0000, 0.0000, 0.0000],
    [-0.0010, -0.0050, 0.0000, 0.0000],
    [0.0000, 0.0000, 0.0005, 0.0000],
    [0.0000, 0.0000, -0.0010, 0.0050],
]
THERMO_L = [0.1, 0.05, 0.1, 0.05]
THERMO_P = [500.0, 1.0, 500.0, 1.0]
THERMO_NOISE_BOUND = [0.003, 0.05, 0.003, 0.05]
# (start, stop, per-step process disturbance); half-open step ranges.
THERMO_WINDOWS = (
    (1000, 2500, (0.0005, 0.0, 0.0, 0.0)),
    (4000, 5500, (0.0, 0.0, 0.0, 0.02)),
    (7000, 8500, (0.0, -0.015, 0.0004, 0.0)),
)


def builtin_benchmark(seed=0):
    """Surrogate of the two-tank thermo-fluid benchmark: 2 agents, 4 sensors, 4 inputs."""
    model = LtiModel(
        A=THERMO_A, B=THERMO_B, C=np.eye(4),
        sensor_partition=[(0, 1), (1, 2), (2, 3), (3, 4)],
        input_partition=[(0, 2), (2, 4)],
        Ts=0.2,
    )
    return Scenario(
        name="thermo-fluid",
        model=model,
        agents=[AgentSpec("combined", (0, 1), 0), AgentSpec("combined", (2, 3), 1)],
        observer={"L": np.diag(THERMO_L)},
        controller={"lqr": {"Q": np.diag([100.0, 1.0, 100.0, 1.0]), "R": np.eye(4)}},
        measurement_trigger=MeasurementTriggerConfig((0.01, 0.2, 0.01, 0.2)),
        input_trigger=InputTriggerConfig((0.02, 0.02)),
        process_noise=NoiseSpec("step_sequence", dim=4, windows=THERMO_WINDOWS, seed=seed),
        measurement_noise=NoiseSpec("uniform", dim=4, bound=THERMO_NOISE_BOUND, seed=seed),
        drop=DropModel("iid", 0.05, "per_receiver", seed, frozenset({"input", "reset_estimate"})),
        reset_period=0,
        control=True,
        input_mode="event",
        horizon=10_000,
        seed=seed,
        lyapunov_P=np.diag(THERMO_P),
    )


BENCHMARKS = {"thermo-fluid": builtin_benchmark}
