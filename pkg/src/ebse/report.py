"""CSV and JSON export of run traces, rates and certificates.

Trace CSV columns, one row per step ``k = 1..horizon``:

``k``, ``t``
    step index and time ``k * Ts``.
``x<c>``, ``xc<c>``
    true state and centralized reference estimate, component ``c``.
``xhat<i>_<c>``
    agent ``i``'s estimate after update and optional reset.
``innov<l>``, ``trig<l>``, ``fate<l>``
    sensor ``l``: innovation norm against its owner's prediction, trigger
    decision (0/1) and bus fate: empty when silent, ``delivered`` when every
    receiver got it, else ``dropped:`` followed by the missing receivers
    joined by ``|``.
``u<c>``, ``uhat<i>_<c>``, ``utrig<j>``
    applied input, agent input estimates (event-input mode only) and input
    group triggers; present only with control enabled.
``reset``
    1 at synchronous reset steps.
``err<i>``, ``eij<i>_<j>``
    2-norms of ``xc - xhat_i`` and ``xhat_i - xhat_j``; pairs are all pairs
    for up to four agents, else ``(0, j)``.

Floats are written with ``repr`` so output is bit-stable across runs.
"""
import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .scenario import SCHEMA_VERSION as SCENARIO_SCHEMA

TRACE_SCHEMA = 1
REPORT_SCHEMA = 1


def _f(x):
    return repr(float(x))


def trace_pairs(n_agents):
    if n_agents <= 4:
        return [(i, j) for i in range(n_agents) for j in range(i + 1, n_agents)]
    return [(0, j) for j in range(1, n_agents)]


def trace_header(trace, model):
    n, q = model.n, model.q
    N, Ns, Ni = trace.n_agents, model.n_sensors, model.n_inputs
    cols = ["k", "t"]
    cols += [f"x{c}" for c in range(n)]
    cols += [f"xc{c}" for c in range(n)]
    cols += [f"xhat{i}_{c}" for i in range(N) for c in range(n)]
    for l in range(Ns):
        cols += [f"innov{l}", f"trig{l}", f"fate{l}"]
    if trace.control:
        cols += [f"u{c}" for c in range(q)]
        if trace.input_mode == "event":
            cols += [f"uhat{i}_{c}" for i in range(N) for c in range(q)]
        cols += [f"utrig{j}" for j in range(Ni)]
    cols.append("reset")
    cols += [f"err{i}" for i in range(N)]
    cols += [f"eij{i}_{j}" for i, j in trace_pairs(N)]
    return cols


def _fate(trace, k, l):
    if not trace.meas_trigger[k, l]:
        return ""
    sender = trace.sensor_owner[l]
    missed = [r for r in range(trace.n_agents) if r != sender and not trace.meas_delivered[k, l, r]]
    if not missed:
        return "delivered"
    return "dropped:" + "|".join(str(r) for r in missed)


def trace_rows(trace, model):
    N = trace.n_agents
    pairs = trace_pairs(N)
    err = np.linalg.norm(trace.agent_error(), axis=2)
    eij = [np.linalg.norm(trace.pair_error(i, j), axis=1) for i, j in pairs]
    event_inputs = trace.control and trace.input_mode == "event"
    for k in range(1, trace.horizon + 1):
        row = [str(k), _f(k * model.Ts)]
        row += [_f(v) for v in trace.x[k]]
        row += [_f(v) for v in trace.xc[k]]
        row += [_f(v) for v in trace.x_filt[k].ravel()]
        for l in range(model.n_sensors):
            row += [_f(trace.innovation[k, l]), str(int(trace.meas_trigger[k, l])), _fate(trace, k, l)]
        if trace.control:
            row += [_f(v) for v in trace.u[k]]
            if event_inputs:
                row += [_f(v) for v in trace.u_hat[k].ravel()]
            row += [str(int(b)) for b in trace.input_trigger[k]]
        row.append(str(int(trace.reset[k])))
        row += [_f(e) for e in err[k]]
        row += [_f(e[k]) for e in eij]
        yield row


def write_trace_csv(trace, model, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(trace, model))
        w.writerows(trace_rows(trace, model))


def trace_csv_text(trace, model):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(trace, model))
    w.writerows(trace_rows(trace, model))
    return buf.getvalue()


def write_rates_csv(rates, path):
    """Moving-average rate per channel, one row per step ``1..horizon``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + list(rates.channels))
        for s in range(rates.steps):
            w.writerow([str(s + 1)] + [_f(v) for v in rates.moving[s]])


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def run_summary(scenario, trace, rates, checks):
    err = np.linalg.norm(trace.agent_error(), axis=2)
    eps = np.linalg.norm(trace.estimation_error(), axis=2)
    pairs = trace_pairs(trace.n_agents)
    return {
        "schema": f"ebse.run/{REPORT_SCHEMA}",
        "scenario": scenario.name,
        "seed": scenario.seed,
        "horizon": scenario.horizon,
        "agents": trace.n_agents,
        "max_err": err.max(axis=0),
        "max_estimation_error": eps.max(axis=0),
        "max_central_error": float(np.linalg.norm(trace.central_error(), axis=1).max()),
        "max_eij": {f"{i}_{j}": float(np.linalg.norm(trace.pair_error(i, j), axis=1).max())
                    for i, j in pairs},
        "max_state_norm": float(np.linalg.norm(trace.x, axis=1).max()),
        "dropped_frames": int(trace.meas_dropped[1:].sum()),
        "resets": int(trace.reset[1:].sum()),
        "capacity_violations": trace.capacity_violations,
        "rates": rates.to_dict(),
        "consistency": checks,
    }


def write_run(scenario, trace, rates, checks, out_dir, fmt="csv"):
    """Write a run to ``out_dir``; returns the list of files written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_summary(scenario, trace, rates, checks)
    files = []
    if fmt == "csv":
        write_trace_csv(trace, scenario.model, out / "trace.csv")
        write_rates_csv(rates, out / "rates.csv")
        trace.bus_log().write_csv(out / "bus_log.csv")
        files += [out / "trace.csv", out / "rates.csv", out / "bus_log.csv"]
    elif fmt != "json":
        raise ValueError(f"unknown format {fmt!r}")
    (out / "summary.json").write_text(dumps(summary))
    files.append(out / "summary.json")
    return files


def analysis_document(scenario, certificate, bounds):
    return {
        "schema": f"ebse.analysis/{REPORT_SCHEMA}",
        "scenario": scenario.name,
        "lyapunov_certificate": None if certificate is None else certificate.to_dict(),
        "bounds": bounds.to_dict(),
    }


def schema_versions():
    return {"scenario": SCENARIO_SCHEMA, "trace_csv": TRACE_SCHEMA,
            "run_json": REPORT_SCHEMA, "analysis_json": REPORT_SCHEMA}


def read_trace_csv(path):
    """Load a trace CSV as ``{column: array}``; fate columns stay strings."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trace file")
    header, body = rows[0], rows[1:]
    cols = {}
    for c, name in enumerate(header):
        raw = [r[c] for r in body]
        if name.startswith("fate"):
            cols[name] = np.array(raw, dtype=object)
        elif name in ("k", "reset") or name.startswith(("trig", "utrig")):
            cols[name] = np.array([int(v) for v in raw], dtype=np.int64)
        else:
            cols[name] = np.array([float(v) for v in raw], dtype=np.float64)
    return cols


def replay_checks(cols, delta_est, n_agents, err_bounds=None):
    """Check a loaded trace against trigger thresholds and optional error bounds."""
    out = {"steps": int(len(cols["k"]))}
    silent_ok, fired_ok = True, True
    for l, delta in enumerate(delta_est):
        innov, trig = cols[f"innov{l}"], cols[f"trig{l}"]
        silent_ok &= bool(np.all(innov[trig == 0] < delta))
        fired_ok &= bool(np.all(innov[trig == 1] >= delta))
        fates = cols[f"fate{l}"]
        if np.any((trig == 1) != (fates != "")):
            fired_ok = False
    out["silent_innovations_below_threshold"] = silent_ok
    out["transmissions_reached_threshold"] = fired_ok
    out["sensor_rates"] = [float(cols[f"trig{l}"].mean()) for l in range(len(delta_est))]
    ok = silent_ok and fired_ok
    if err_bounds is not None:
        sup = [float(cols[f"err{i}"].max()) for i in range(n_agents)]
        out["sup_err"] = sup
        out["err_bounds"] = list(err_bounds)
        out["bounds_hold"] = all(s <= b for s, b in zip(sup, err_bounds))
        ok = ok and out["bounds_hold"]
    out["ok"] = ok
    return out
