"""Event triggers for measurements and control inputs."""
from dataclasses import dataclass

import numpy as np

NORMS = ("two", "inf")


def norm(r, kind="two"):
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if r.size == 0:
        return 0.0
    if kind == "inf":
        return float(np.max(np.abs(r)))
    if kind == "two":
        return float(np.sqrt(r @ r))
    raise ValueError(f"unknown norm {kind!r}; expected one of {NORMS}")


def _thresholds(name, values):
    vals = tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=np.float64)))
    for i, d in enumerate(vals):
        if np.isnan(d) or d < 0:
            raise ValueError(f"{name}[{i}] = {d} must be non-negative")
    return vals


@dataclass(frozen=True)
class MeasurementTriggerConfig:
    """One threshold per sensor channel; ``inf`` disables a channel."""

    delta_est: tuple
    norm: str = "two"

    def __post_init__(self):
        object.__setattr__(self, "delta_est", _thresholds("delta_est", self.delta_est))
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")


@dataclass(frozen=True)
class InputTriggerConfig:
    """One send-on-delta threshold per input group; ``inf`` never sends."""

    delta_ctrl: tuple
    norm: str = "two"

    def __post_init__(self):
        object.__setattr__(self, "delta_ctrl", _thresholds("delta_ctrl", self.delta_ctrl))
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")


def measurement_trigger(y_i, y_pred_i, delta_i, kind="two"):
    """Transmit iff the innovation norm reaches the threshold (closed)."""
    return norm(np.asarray(y_i, float) - np.asarray(y_pred_i, float), kind) >= delta_i


def input_trigger(u_i, u_last_i, delta_ctrl_i, kind="two"):
    """Send-on-delta; the caller stores ``u_i`` as the new ``u_last`` on True."""
    return norm(np.asarray(u_i, float) - np.asarray(u_last_i, float), kind) >= delta_ctrl_i


def triggered_set(decisions):
    """Split sensor indices (0-based) into transmitting and silent sets."""
    fired = frozenset(i for i, d in enumerate(decisions) if d)
    silent = frozenset(range(len(decisions))) - fired
    return fired, silent
