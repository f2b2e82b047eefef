"""Discrete-time LTI process with per-agent sensor and input partitions.

.. math::
    x(k) &= A x(k-1) + B u(k-1) + v(k-1) \\
    y(k) &= C x(k) + w(k)

Rows of ``C`` are split into contiguous sensor blocks ``C_i`` and columns of
``B`` into contiguous input blocks ``B_i``.
"""
from dataclasses import dataclass, field

import numpy as np

NOISE_KINDS = ("zero", "uniform", "gaussian", "step_sequence")


class DimensionError(ValueError):
    pass


def _as_matrix(name, value):
    arr = np.array(value, dtype=np.float64, ndmin=2)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(arr)


def _check_partition(name, parts, total):
    parts = [tuple(int(v) for v in p) for p in parts]
    if not parts:
        raise DimensionError(f"{name}: at least one block is required")
    covered = 0
    for idx, (start, stop) in enumerate(parts):
        if stop - start < 1:
            raise DimensionError(f"{name}[{idx}] = [{start}, {stop}) is empty")
        if start != covered:
            if start < covered:
                raise DimensionError(
                    f"{name}[{idx}] = [{start}, {stop}) overlaps the previous "
                    f"block (indices {start}..{covered - 1} assigned twice)")
            raise DimensionError(
                f"{name}[{idx}] = [{start}, {stop}) leaves indices "
                f"{covered}..{start - 1} unassigned")
        covered = stop
    if covered != total:
        raise DimensionError(
            f"{name} covers {covered} indices but the matrix has {total}")
    return parts


@dataclass(eq=False)
class LtiModel:
    """Process matrices plus the sensor/input block structure.

    ``sensor_partition`` holds half-open row ranges of ``C`` (one per sensor
    channel) and ``input_partition`` half-open column ranges of ``B`` (one
    per input block). ``Ts`` is informational only.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sensor_partition: list = None
    input_partition: list = None
    Ts: float = 1.0

    def __post_init__(self):
        self.A = _as_matrix("A", self.A)
        self.B = _as_matrix("B", self.B)
        self.C = _as_matrix("C", self.C)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise DimensionError(f"B has {self.B.shape[0]} rows, expected n={n}")
        if self.C.shape[1] != n:
            raise DimensionError(f"C has {self.C.shape[1]} columns, expected n={n}")
        if self.sensor_partition is None:
            self.sensor_partition = [(0, self.p)]
        if self.input_partition is None:
            self.input_partition = [(0, self.q)]
        self.sensor_partition = _check_partition("sensor_partition", self.sensor_partition, self.p)
        self.input_partition = _check_partition("input_partition", self.input_partition, self.q)
        self.Ts = float(self.Ts)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return self.B.shape[1]

    @property
    def n_sensors(self):
        return len(self.sensor_partition)

    @property
    def n_inputs(self):
        return len(self.input_partition)

    def C_block(self, i):
        start, stop = self.sensor_partition[i]
        return self.C[start:stop]

    def B_block(self, i):
        start, stop = self.input_partition[i]
        return self.B[:, start:stop]

    def measurement_of_sensor(self, y, i):
        start, stop = self.sensor_partition[i]
        return np.asarray(y)[start:stop]

    def input_of_agent(self, u, i):
        start, stop = self.input_partition[i]
        return np.asarray(u)[start:stop]

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "sensors": [list(p) for p in self.sensor_partition],
            "inputs": [list(p) for p in self.input_partition],
            "Ts": self.Ts,
        }


def _vector(name, value, dim):
    vec = np.asarray(value, dtype=np.float64).reshape(-1)
    if vec.shape != (dim,):
        raise DimensionError(f"{name} has dimension {vec.size}, expected {dim}")
    return vec


def step_process(model, x_prev, u_prev, v_prev):
    x_prev = _vector("x_prev", x_prev, model.n)
    u_prev = _vector("u_prev", u_prev, model.q)
    v_prev = _vector("v_prev", v_prev, model.n)
    return model.A @ x_prev + model.B @ u_prev + v_prev


def measure(model, x, w):
    x = _vector("x", x, model.n)
    w = _vector("w", w, model.p)
    return model.C @ x + w


@dataclass(frozen=True)
class NoiseSpec:
    """A reproducible disturbance source.

    ``bound`` is the per-component half-width for ``uniform``; ``variance``
    the covariance diagonal for ``gaussian``; ``windows`` a tuple of
    ``(start, stop, vector)`` with half-open ``[start, stop)`` step ranges
    for ``step_sequence``.
    """

    kind: str = "zero"
    dim: int = 1
    bound: tuple = ()
    variance: tuple = ()
    windows: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.dim < 1:
            raise ValueError("noise dimension must be >= 1")
        if self.seed < 0:
            raise ValueError("noise seed must be non-negative")
        if self.kind == "uniform":
            object.__setattr__(self, "bound", _broadcast("bound", self.bound, self.dim))
            if not all(np.isfinite(b) and b >= 0 for b in self.bound):
                raise ValueError("uniform bounds must be finite and non-negative")
        if self.kind == "gaussian":
            object.__setattr__(self, "variance", _broadcast("variance", self.variance, self.dim))
            if not all(np.isfinite(s) and s >= 0 for s in self.variance):
                raise ValueError("gaussian variances must be finite and non-negative")
        if self.kind == "step_sequence":
            wins = []
            for start, stop, vec in self.windows:
                vec = tuple(float(c) for c in np.broadcast_to(np.asarray(vec, float), (self.dim,)))
                if int(stop) <= int(start):
                    raise ValueError(f"step window [{start}, {stop}) is empty")
                wins.append((int(start), int(stop), vec))
            wins.sort(key=lambda w: w[0])
            _check_window_overlap(wins)
            object.__setattr__(self, "windows", tuple(wins))

    def to_dict(self):
        out = {"kind": self.kind, "dim": self.dim, "seed": self.seed}
        if self.kind == "uniform":
            out["bound"] = list(self.bound)
        elif self.kind == "gaussian":
            out["variance"] = list(self.variance)
        elif self.kind == "step_sequence":
            out["windows"] = [[s, e, list(v)] for s, e, v in self.windows]
        return out


def _broadcast(name, value, dim):
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        arr = np.repeat(arr, dim)
    if arr.shape != (dim,):
        raise DimensionError(f"{name} has {arr.size} entries, expected {dim}")
    return tuple(float(v) for v in arr)


def _check_window_overlap(windows):
    # Overlap is only a conflict where both windows drive the same channel.
    for a, (s0, e0, v0) in enumerate(windows):
        for s1, e1, v1 in windows[a + 1:]:
            if s1 >= e0:
                break
            shared = [c for c in range(len(v0)) if v0[c] != 0.0 and v1[c] != 0.0]
            if shared:
                raise ValueError(
                    f"step windows [{s0}, {e0}) and [{s1}, {e1}) overlap on channels {shared}")


def sample_noise(spec, step, channel=0):
    """Draw the disturbance for one step.

    The generator is keyed by ``(seed, channel, step)`` so a draw never
    depends on how many other draws were made before it.
    """
    if spec.kind == "zero":
        return np.zeros(spec.dim)
    if spec.kind == "step_sequence":
        out = np.zeros(spec.dim)
        for start, stop, vec in spec.windows:
            if start <= step < stop:
                out += vec
        return out
    rng = np.random.default_rng([spec.seed, channel, step])
    if spec.kind == "uniform":
        bound = np.asarray(spec.bound)
        return rng.uniform(-bound, bound)
    return rng.standard_normal(spec.dim) * np.sqrt(spec.variance)


def realize_noise(spec, length, channel=0, start=0):
    """Stack ``sample_noise`` for steps ``start .. start+length-1``."""
    if spec.kind == "zero":
        return np.zeros((length, spec.dim))
    if spec.kind == "step_sequence":
        out = np.zeros((length, spec.dim))
        for s, e, vec in spec.windows:
            lo, hi = max(s - start, 0), min(e - start, length)
            if lo < hi:
                out[lo:hi] += vec
        return out
    return np.array([sample_noise(spec, start + k, channel) for k in range(length)]).reshape(length, spec.dim)


@dataclass(eq=False)
class ProcessTrajectory:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    w: np.ndarray

    @property
    def length(self):
        return self.x.shape[0]


def simulate_open_loop(model, x0, u_seq, v_spec, w_spec, v_channel=0, w_channel=1):
    """Roll the process forward under a fixed input sequence.

    ``u_seq`` has one row per step; the result has ``len(u_seq) + 1`` rows
    with ``x[0] = x0``.
    """
    u_seq = np.asarray(u_seq, dtype=np.float64).reshape(-1, model.q)
    steps = u_seq.shape[0]
    v = realize_noise(v_spec, steps + 1, v_channel)
    w = realize_noise(w_spec, steps + 1, w_channel)
    x = np.empty((steps + 1, model.n))
    y = np.empty((steps + 1, model.p))
    x[0] = _vector("x0", x0, model.n)
    y[0] = measure(model, x[0], w[0])
    for k in range(1, steps + 1):
        x[k] = step_process(model, x[k - 1], u_seq[k - 1], v[k - 1])
        y[k] = measure(model, x[k], w[k])
    return ProcessTrajectory(x=x, y=y, v=v, w=w)
