"""A single distributed agent: prediction, subset update, reset and control."""
from dataclasses import dataclass, field

import numpy as np

from .model import _vector

ROLES = ("sensor", "estimator", "combined")
D_STREAM = 0xD1


@dataclass
class AgentState:
    """Mutable per-agent estimator state.

    ``sensors`` lists the sensor channels this agent triggers; ``input`` is
    the input group it computes, or ``None``.
    """

    id: int
    role: str
    x_pred: np.ndarray
    x_filt: np.ndarray
    u_hat: np.ndarray
    u_last: np.ndarray
    sensors: tuple = ()
    input: int = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"agent {self.id}: unknown role {self.role!r}")
        if self.role == "sensor" and self.input is not None:
            raise ValueError(f"agent {self.id}: sensor agents do not compute inputs")
        if self.role == "estimator" and self.sensors:
            raise ValueError(f"agent {self.id}: estimator agents own no sensors")

    @classmethod
    def initial(cls, id, role, model, xhat0=None, sensors=(), input=None):
        x0 = np.zeros(model.n) if xhat0 is None else _vector("xhat0", xhat0, model.n).copy()
        u_last = np.zeros(0)
        if input is not None:
            a, b = model.input_partition[input]
            u_last = np.zeros(b - a)
        return cls(id=id, role=role, x_pred=x0.copy(), x_filt=x0.copy(),
                   u_hat=np.zeros(model.q), u_last=u_last,
                   sensors=tuple(sensors), input=input)


@dataclass(frozen=True)
class DisturbanceInjection:
    """Estimator disturbances ``d_i(k)``.

    ``schedule`` holds ``(step, agent, vector)`` entries. ``d_max`` (one
    entry per agent) enables an extra random term with ``||d_i(k)||_2 <=
    d_max[i]``, drawn with probability ``prob`` at each step ``k >= 1``.
    """

    schedule: tuple = ()
    d_max: tuple = ()
    prob: float = 1.0
    seed: int = 0

    def __post_init__(self):
        entries = tuple((int(k), int(a), tuple(float(c) for c in np.ravel(v)))
                        for k, a, v in self.schedule)
        object.__setattr__(self, "schedule", entries)
        object.__setattr__(self, "d_max", tuple(float(d) for d in self.d_max))
        if any(d < 0 for d in self.d_max):
            raise ValueError("d_max entries must be non-negative")
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("prob must lie in [0, 1]")

    def realize(self, horizon, n_agents, n):
        """Dense array ``d[k, i]`` for ``k = 0..horizon``."""
        d = np.zeros((horizon + 1, n_agents, n))
        for k, a, vec in self.schedule:
            if len(vec) != n:
                raise ValueError(f"disturbance at step {k} for agent {a} has dimension {len(vec)}, expected {n}")
            if not 0 <= a < n_agents:
                raise ValueError(f"disturbance schedule names unknown agent {a}")
            if 0 <= k <= horizon:
                d[k, a] += vec
        if self.d_max:
            if len(self.d_max) != n_agents:
                raise ValueError(f"d_max has {len(self.d_max)} entries for {n_agents} agents")
            for k in range(1, horizon + 1):
                rng = np.random.default_rng([self.seed, D_STREAM, k])
                hit = rng.random(n_agents) < self.prob
                direction = rng.standard_normal((n_agents, n))
                radius = rng.random(n_agents)
                for i in range(n_agents):
                    if hit[i] and self.d_max[i] > 0:
                        nrm = np.linalg.norm(direction[i])
                        if nrm > 0:
                            d[k, i] += self.d_max[i] * radius[i] * direction[i] / nrm
        return d

    def bound(self, i):
        """Norm bound on the random part plus the largest scheduled entry."""
        sched = max((np.linalg.norm(v) for k, a, v in self.schedule if a == i and k >= 1), default=0.0)
        rand = self.d_max[i] if self.d_max else 0.0
        return float(sched + rand)


def agent_predict(model, state, u_source):
    u_source = _vector("u_source", u_source, model.q)
    return model.A @ state.x_filt + model.B @ u_source


def agent_update(model, gain, state, delivered, d_i=None):
    """Fuse the delivered measurements into ``state.x_pred``.

    ``delivered`` is an iterable of ``(sensor, y_sensor)`` pairs.
    """
    x = np.array(state.x_pred, dtype=np.float64)
    seen = set()
    for sensor, y_l in delivered:
        if sensor in seen:
            raise ValueError(f"sensor {sensor} delivered twice")
        seen.add(sensor)
        C_l = model.C_block(sensor)
        y_l = _vector(f"y_{sensor}", y_l, C_l.shape[0])
        x = x + gain.block(sensor) @ (y_l - C_l @ state.x_pred)
    if d_i is not None:
        x = x + _vector("d_i", d_i, model.n)
    return x


def synchronous_reset(estimates, k=None, K=None):
    """Replace every estimate with the joint average.

    With ``k`` and ``K`` given, steps that are not positive multiples of
    ``K`` return the estimates unchanged.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    if K is not None and not (K > 0 and k is not None and k > 0 and k % K == 0):
        return estimates.copy()
    base = estimates[0]
    dev = np.zeros_like(base)
    for row in estimates:
        dev += row - base
    mean = base + dev / estimates.shape[0]
    return np.repeat(mean[None, :], estimates.shape[0], axis=0)


def compute_control(controller_gain, state):
    if state.input is None or state.role == "sensor":
        raise ValueError(f"agent {state.id} ({state.role}) computes no input")
    return controller_gain.block(state.input) @ state.x_filt


def update_input_estimate(model, state, frames, own_u=None):
    """Overwrite blocks of ``u_hat`` received this step.

    ``frames`` holds ``(sender_input_group, u_j)`` pairs; the agent's own
    block is always refreshed with ``own_u``.
    """
    u_hat = np.array(state.u_hat, dtype=np.float64)
    for j, u_j in frames:
        a, b = model.input_partition[j]
        u_hat[a:b] = u_j
    if state.input is not None and own_u is not None:
        a, b = model.input_partition[state.input]
        u_hat[a:b] = own_u
    return u_hat
