"""Lock-step simulation of the distributed event-based estimator.

Two engines produce the same :class:`RunTrace`: ``"kernel"`` runs the fused
loop in :mod:`ebse.kernels`, ``"agents"`` steps :class:`~ebse.agent.AgentState`
objects over a :class:`~ebse.bus.Bus` one operation at a time. The second is
slower and exists to cross-check the first.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .agent import (AgentState, agent_predict, agent_update, compute_control,
                    synchronous_reset, update_input_estimate)
from .bus import Bus, BusFrame, BusLog, capacity_check, drop_uniforms
from .model import measure, realize_noise, step_process
from .observer import CentralEstimate, central_predict, central_update
from .trigger import input_trigger, measurement_trigger, norm

V_CHANNEL = 0
W_CHANNEL = 1
RATE_WINDOW = 100


@dataclass(eq=False)
class RunTrace:
    """Arrays indexed by step ``k = 0..horizon``; row 0 is the initial condition.

    Per-agent arrays have shape ``(steps, N, ...)``. ``x_filt_pre`` is the
    estimate right after the measurement update, ``x_filt`` after an
    optional reset. ``d_eff`` is the injected disturbance plus the
    equivalent of every measurement frame the agent missed.
    """

    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    w: np.ndarray
    xc_pred: np.ndarray
    xc: np.ndarray
    x_pred: np.ndarray
    x_filt_pre: np.ndarray
    x_filt: np.ndarray
    innovation: np.ndarray
    meas_trigger: np.ndarray
    meas_delivered: np.ndarray
    d_inj: np.ndarray
    d_eff: np.ndarray
    u: np.ndarray
    u_hat: np.ndarray
    input_trigger: np.ndarray
    input_delivered: np.ndarray
    reset: np.ndarray
    sensor_owner: list
    input_owner: list
    control: bool = False
    input_mode: str = "periodic"
    capacity_violations: list = field(default_factory=list)

    @property
    def horizon(self):
        return self.x.shape[0] - 1

    @property
    def n_agents(self):
        return self.x_filt.shape[1]

    @property
    def meas_dropped(self):
        return self.meas_trigger[:, :, None] & ~self.meas_delivered

    def agent_error(self):
        """``e_i(k) = xc(k) - x_i(k)``, shape ``(steps, N, n)``."""
        return self.xc[:, None, :] - self.x_filt

    def estimation_error(self):
        """``eps_i(k) = x(k) - x_i(k)``."""
        return self.x[:, None, :] - self.x_filt

    def central_error(self):
        return self.x - self.xc

    def pair_error(self, i, j):
        return self.x_filt[:, i] - self.x_filt[:, j]

    def bus_log(self):
        """Rebuild the frame-level log from the fate arrays."""
        log = BusLog()
        n = self.n_agents
        for k in range(self.horizon + 1):
            for l in np.flatnonzero(self.meas_trigger[k]):
                sender = self.sensor_owner[l]
                for r in range(n):
                    if r != sender:
                        ok = bool(self.meas_delivered[k, l, r])
                        log.records.append((k, "measurement", sender, r, "delivered" if ok else "dropped"))
            for j in np.flatnonzero(self.input_trigger[k]):
                sender = self.input_owner[j]
                for r in range(n):
                    if r != sender:
                        ok = bool(self.input_delivered[k, j, r])
                        log.records.append((k, "input", sender, r, "delivered" if ok else "dropped"))
            if self.reset[k]:
                for s in range(n):
                    for r in range(n):
                        if r != s:
                            log.records.append((k, "reset_estimate", s, r, "delivered"))
        return log


@dataclass(eq=False)
class CommRateReport:
    """Communication rates over steps ``1..horizon``.

    ``moving`` holds the trailing ``window``-step average per channel;
    channel names are ``sensor<l>`` then ``input<j>``.
    """

    channels: list
    moving: np.ndarray
    average: dict
    transmissions: dict
    steps: int
    window: int = RATE_WINDOW

    @property
    def overall(self):
        total = sum(self.transmissions.values())
        return total / (len(self.channels) * self.steps)

    @property
    def sensor_rate(self):
        names = [c for c in self.channels if c.startswith("sensor")]
        return sum(self.transmissions[c] for c in names) / (len(names) * self.steps)

    @property
    def input_rate(self):
        names = [c for c in self.channels if c.startswith("input")]
        if not names:
            return None
        return sum(self.transmissions[c] for c in names) / (len(names) * self.steps)

    def to_dict(self):
        return {
            "window": self.window,
            "steps": self.steps,
            "channels": self.channels,
            "transmissions": self.transmissions,
            "average": self.average,
            "overall": self.overall,
            "sensor_overall": self.sensor_rate,
            "input_overall": self.input_rate,
            "reduction": 1.0 - self.overall,
        }


def comm_rates(trace, window=RATE_WINDOW):
    events = [trace.meas_trigger[1:]]
    names = [f"sensor{l}" for l in range(trace.meas_trigger.shape[1])]
    if trace.control:
        events.append(trace.input_trigger[1:])
        names += [f"input{j}" for j in range(trace.input_trigger.shape[1])]
    ev = np.ascontiguousarray(np.concatenate(events, axis=1), dtype=np.float64)
    steps = ev.shape[0]
    counts = {name: int(c) for name, c in zip(names, ev.sum(axis=0).round().astype(int))}
    return CommRateReport(
        channels=names,
        moving=kernels.trailing_mean(ev, int(window)),
        average={name: counts[name] / steps for name in names},
        transmissions=counts,
        steps=steps,
        window=window,
    )


def _noise_arrays(scenario):
    H = scenario.horizon
    v = realize_noise(scenario.process_noise, H + 1, V_CHANNEL)
    w = realize_noise(scenario.measurement_noise, H + 1, W_CHANNEL)
    return v, w


def _n_slots(model):
    return model.n_sensors + model.n_inputs


def run(scenario, engine="kernel"):
    if engine == "kernel":
        return _run_kernel(scenario)
    if engine == "agents":
        return _run_agents(scenario)
    raise ValueError(f"unknown engine {engine!r}")


def _run_kernel(scenario):
    model = scenario.model
    H, N = scenario.horizon, scenario.n_agents
    n, p, q = model.n, model.p, model.q
    Ns, Ni = model.n_sensors, model.n_inputs
    L = scenario.observer_gain().L
    F = scenario.controller_gain().F
    v, w = _noise_arrays(scenario)
    drop = scenario.drop
    if drop.active:
        drop_u = np.stack([drop_uniforms(drop.seed, k, _n_slots(model), N) for k in range(H + 1)])
    else:
        drop_u = np.ones((H + 1, _n_slots(model), N))
    d_inj = scenario.disturbance.realize(H, N, n)

    out = dict(
        x=np.zeros((H + 1, n)), y=np.zeros((H + 1, p)),
        xc_pred=np.zeros((H + 1, n)), xc=np.zeros((H + 1, n)),
        x_pred=np.zeros((H + 1, N, n)), x_filt_pre=np.zeros((H + 1, N, n)),
        x_filt=np.zeros((H + 1, N, n)), innovation=np.zeros((H + 1, Ns)),
        meas_trigger=np.zeros((H + 1, Ns), dtype=np.bool_),
        meas_delivered=np.zeros((H + 1, Ns, N), dtype=np.bool_),
        d_eff=np.zeros((H + 1, N, n)), u=np.zeros((H + 1, q)),
        u_hat=np.zeros((H + 1, N, q)),
        input_trigger=np.zeros((H + 1, Ni), dtype=np.bool_),
        input_delivered=np.zeros((H + 1, Ni, N), dtype=np.bool_),
        reset=np.zeros(H + 1, dtype=np.bool_),
    )
    sens = np.array(model.sensor_partition, dtype=np.int64).reshape(-1, 2)
    inp = np.array(model.input_partition, dtype=np.int64).reshape(-1, 2)
    kernels.simulate_loop(
        model.A, model.B, model.C, np.ascontiguousarray(L.T), np.ascontiguousarray(F),
        np.ascontiguousarray(sens[:, 0]), np.ascontiguousarray(sens[:, 1]),
        np.array(scenario.sensor_owner, dtype=np.int64),
        np.ascontiguousarray(inp[:, 0]), np.ascontiguousarray(inp[:, 1]),
        np.array(scenario.input_owner, dtype=np.int64),
        np.array(scenario.measurement_trigger.delta_est, dtype=np.float64),
        np.array(scenario.input_trigger.delta_ctrl, dtype=np.float64),
        scenario.measurement_trigger.norm == "inf", scenario.input_trigger.norm == "inf",
        bool(scenario.control), scenario.input_mode == "event", int(scenario.reset_period),
        float(drop.drop_prob), drop.scope == "per_frame",
        drop.droppable("measurement"), drop.droppable("input"),
        scenario.x0.astype(np.float64), scenario.xhat0.astype(np.float64),
        v, w, drop_u, d_inj,
        out["x"], out["y"], out["xc_pred"], out["xc"], out["x_pred"], out["x_filt_pre"],
        out["x_filt"], out["innovation"], out["meas_trigger"], out["meas_delivered"],
        out["d_eff"], out["u"], out["u_hat"], out["input_trigger"], out["input_delivered"],
        out["reset"],
    )
    trace = RunTrace(v=v, w=w, d_inj=d_inj, sensor_owner=list(scenario.sensor_owner),
                     input_owner=list(scenario.input_owner), control=bool(scenario.control),
                     input_mode=scenario.input_mode, **out)
    trace.capacity_violations = _capacity_report(scenario, trace)
    return trace


def _capacity_report(scenario, trace):
    cap = scenario.capacity
    if cap is None:
        return []
    issues = []
    for k in range(1, trace.horizon + 1):
        offered = int(trace.meas_trigger[k].sum() + trace.input_trigger[k].sum())
        issue = capacity_check(offered, cap, k)
        if issue:
            issues.append(issue)
        if trace.reset[k]:
            # the estimate exchange is its own one-step round
            issue = capacity_check(trace.n_agents, cap, k)
            if issue:
                issue["kind"] = "reset"
                issues.append(issue)
    return issues


def _run_agents(scenario):
    """Step-by-step reference engine built from the per-module operations."""
    model = scenario.model
    gain = scenario.observer_gain()
    fgain = scenario.controller_gain()
    H, N = scenario.horizon, scenario.n_agents
    n, p, q = model.n, model.p, model.q
    Ns, Ni = model.n_sensors, model.n_inputs
    mtrig, itrig = scenario.measurement_trigger, scenario.input_trigger
    event_inputs = scenario.input_mode == "event"
    v, w = _noise_arrays(scenario)
    d_inj = scenario.disturbance.realize(H, N, n)
    bus = Bus(N, scenario.drop, _n_slots(model), scenario.capacity)
    owner = scenario.sensor_owner
    in_owner = scenario.input_owner

    agents = [AgentState.initial(i, spec.role, model, scenario.xhat0, spec.sensors, spec.input)
              for i, spec in enumerate(scenario.agents)]
    rec = {name: [] for name in ("x", "y", "xc_pred", "xc", "x_pred", "x_filt_pre", "x_filt",
                                 "innovation", "meas_trigger", "meas_delivered", "d_eff", "u",
                                 "u_hat", "input_trigger", "input_delivered", "reset")}
    x = scenario.x0.copy()
    central = CentralEstimate(scenario.xhat0.copy(), scenario.xhat0.copy())
    u_prev = np.zeros(q)
    for a in agents:
        a.x_filt = a.x_filt + d_inj[0, a.id]

    for k in range(H + 1):
        meas_trig = np.zeros(Ns, dtype=bool)
        meas_deliv = np.zeros((Ns, N), dtype=bool)
        innov = np.zeros(Ns)
        d_eff = d_inj[k].copy()
        if k == 0:
            y = measure(model, x, w[0])
        else:
            x = step_process(model, x, u_prev, v[k - 1])
            y = measure(model, x, w[k])
            central = CentralEstimate(central_predict(model, gain, central, u_prev), None)
            central.x_filt = central_update(model, gain, central.x_pred, y)
            for a in agents:
                a.x_pred = agent_predict(model, a, a.u_hat if event_inputs else u_prev)
            frames = []
            for l in range(Ns):
                y_l = model.measurement_of_sensor(y, l)
                y_pred = model.C_block(l) @ agents[owner[l]].x_pred
                innov[l] = norm(y_l - y_pred, mtrig.norm)
                if measurement_trigger(y_l, y_pred, mtrig.delta_est[l], mtrig.norm):
                    meas_trig[l] = True
                    frames.append(BusFrame("measurement", owner[l], tuple(y_l), k, slot=l))
            delivered = bus.transmit(frames, k)
            for a in agents:
                got = [(f.slot, np.array(f.payload)) for f in delivered[a.id]]
                for l, _ in got:
                    meas_deliv[l, a.id] = True
                missed = [l for l in range(Ns) if meas_trig[l] and not meas_deliv[l, a.id]]
                for l in missed:
                    y_l = model.measurement_of_sensor(y, l)
                    d_eff[a.id] -= gain.block(l) @ (y_l - model.C_block(l) @ a.x_pred)
                a.x_filt = agent_update(model, gain, a, got, d_inj[k, a.id])
        x_filt_pre = np.array([a.x_filt for a in agents])

        in_trig = np.zeros(Ni, dtype=bool)
        in_deliv = np.zeros((Ni, N), dtype=bool)
        u = np.zeros(q)
        own = {}
        if scenario.control:
            frames = []
            for a in agents:
                if a.input is None:
                    continue
                u_j = compute_control(fgain, a)
                own[a.id] = u_j
                lo, hi = model.input_partition[a.input]
                u[lo:hi] = u_j
                fire = input_trigger(u_j, a.u_last, itrig.delta_ctrl[a.input], itrig.norm) if event_inputs else True
                if fire:
                    a.u_last = u_j.copy()
                    in_trig[a.input] = True
                    frames.append(BusFrame("input", a.id, tuple(u_j), k, slot=Ns + a.input))
            if event_inputs:
                delivered = bus.transmit(frames, k)
            else:
                # periodic exchange realizes the known-input assumption: never lost
                delivered = {a.id: list(frames) for a in agents}
            for a in agents:
                got = [(f.slot - Ns, np.array(f.payload)) for f in delivered[a.id]]
                for j, _ in got:
                    in_deliv[j, a.id] = True
                a.u_hat = update_input_estimate(model, a, got, own.get(a.id))

        reset = k > 0 and scenario.reset_period > 0 and k % scenario.reset_period == 0
        if reset:
            new = synchronous_reset([a.x_filt for a in agents])
            for a, est in zip(agents, new):
                a.x_filt = est
        u_prev = u

        rec["x"].append(x)
        rec["y"].append(y)
        rec["xc_pred"].append(central.x_pred if k else scenario.xhat0)
        rec["xc"].append(central.x_filt)
        rec["x_pred"].append([a.x_pred for a in agents])
        rec["x_filt_pre"].append(x_filt_pre)
        rec["x_filt"].append([a.x_filt for a in agents])
        rec["innovation"].append(innov)
        rec["meas_trigger"].append(meas_trig)
        rec["meas_delivered"].append(meas_deliv)
        rec["d_eff"].append(d_eff)
        rec["u"].append(u)
        rec["u_hat"].append([a.u_hat for a in agents])
        rec["input_trigger"].append(in_trig)
        rec["input_delivered"].append(in_deliv)
        rec["reset"].append(reset)

    arrays = {k: np.array(val) for k, val in rec.items()}
    trace = RunTrace(v=v, w=w, d_inj=d_inj, sensor_owner=list(owner), input_owner=list(in_owner),
                     control=bool(scenario.control), input_mode=scenario.input_mode, **arrays)
    trace.capacity_violations = _capacity_report(scenario, trace)
    return trace
