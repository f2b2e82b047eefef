"""Shared broadcast bus with injected packet loss."""
import csv
from dataclasses import dataclass, field

import numpy as np

FRAME_KINDS = ("measurement", "input", "reset_estimate")
DROP_STREAM = 0xB05


@dataclass(frozen=True)
class BusFrame:
    kind: str
    sender: int
    payload: tuple
    step: int
    # Fixed per (kind, sender) so drop fates do not depend on which other
    # frames happen to be offered in the same step.
    slot: int = 0

    def __post_init__(self):
        if self.kind not in FRAME_KINDS:
            raise ValueError(f"unknown frame kind {self.kind!r}")


@dataclass(frozen=True)
class DropModel:
    kind: str = "none"
    drop_prob: float = 0.0
    scope: str = "per_receiver"
    seed: int = 0
    exempt_kinds: frozenset = frozenset({"input", "reset_estimate"})

    def __post_init__(self):
        if self.kind not in ("none", "iid"):
            raise ValueError(f"unknown drop model {self.kind!r}")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError(f"drop_prob must be in [0, 1], got {self.drop_prob}")
        if self.scope not in ("per_receiver", "per_frame"):
            raise ValueError(f"unknown drop scope {self.scope!r}")
        object.__setattr__(self, "exempt_kinds", frozenset(self.exempt_kinds))
        unknown = self.exempt_kinds - set(FRAME_KINDS)
        if unknown:
            raise ValueError(f"unknown exempt frame kinds {sorted(unknown)}")
        if "reset_estimate" not in self.exempt_kinds:
            raise ValueError("reset_estimate frames are always delivered")

    @property
    def active(self):
        return self.kind == "iid" and self.drop_prob > 0.0

    def droppable(self, kind):
        return self.active and kind not in self.exempt_kinds


def drop_uniforms(seed, step, n_slots, n_receivers):
    """Uniform draws deciding frame fates at one step, keyed by (seed, step)."""
    rng = np.random.default_rng([seed, DROP_STREAM, step])
    return rng.random((n_slots, n_receivers))


def broadcast(frames, receivers, drop_model, step, n_slots=None, uniforms=None):
    """Deliver ``frames`` to every receiver, subject to ``drop_model``.

    Returns ``(delivered, fates)``: a dict receiver -> list of frames and a
    list of ``(frame, receiver, delivered)`` tuples for remote receivers.
    Senders always keep their own frames.
    """
    receivers = list(receivers)
    delivered = {r: [] for r in receivers}
    fates = []
    if uniforms is None and drop_model.active and frames:
        if n_slots is None:
            n_slots = max(f.slot for f in frames) + 1
        uniforms = drop_uniforms(drop_model.seed, step, n_slots, max(receivers) + 1)
    for frame in frames:
        for r in receivers:
            if r == frame.sender:
                delivered[r].append(frame)
                continue
            ok = True
            if drop_model.droppable(frame.kind):
                col = 0 if drop_model.scope == "per_frame" else r
                ok = uniforms[frame.slot, col] >= drop_model.drop_prob
            if ok:
                delivered[r].append(frame)
            fates.append((frame, r, ok))
    return delivered, fates


def capacity_check(frames_this_step, max_per_step, step=None):
    """``None`` when within capacity, otherwise a short violation report."""
    if max_per_step is None or frames_this_step <= max_per_step:
        return None
    return {"step": step, "offered": int(frames_this_step), "capacity": int(max_per_step)}


@dataclass
class BusLog:
    """Per-step frame fates and running counters.

    ``records`` rows are ``(step, kind, sender, receiver, fate)`` with fate
    one of ``delivered`` / ``dropped``; self-delivery is not logged.
    """

    records: list = field(default_factory=list)
    offered: dict = field(default_factory=dict)
    delivered: dict = field(default_factory=dict)
    dropped: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def log(self, step, fates, frames):
        for frame in frames:
            key = (frame.kind, frame.sender)
            self.offered[key] = self.offered.get(key, 0) + 1
        for frame, r, ok in fates:
            key = (frame.kind, frame.sender)
            bucket = self.delivered if ok else self.dropped
            bucket[key] = bucket.get(key, 0) + 1
            self.records.append((step, frame.kind, frame.sender, r, "delivered" if ok else "dropped"))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "kind", "sender", "receiver", "fate"])
            writer.writerows(self.records)


class Bus:
    """Single-owner bus advanced once per step by the simulation loop."""

    def __init__(self, n_agents, drop_model, n_slots, capacity=None):
        self.receivers = list(range(n_agents))
        self.drop_model = drop_model
        self.n_slots = n_slots
        self.capacity = capacity
        self.log = BusLog()

    def transmit(self, frames, step):
        uniforms = None
        if self.drop_model.active and frames:
            uniforms = drop_uniforms(self.drop_model.seed, step, self.n_slots, len(self.receivers))
        delivered, fates = broadcast(frames, self.receivers, self.drop_model, step, uniforms=uniforms)
        self.log.log(step, fates, frames)
        issue = capacity_check(len(frames), self.capacity, step)
        if issue:
            self.log.violations.append(issue)
        return delivered
