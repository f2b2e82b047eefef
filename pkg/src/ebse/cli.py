"""Command-line front end: ``ebse run|analyze|verify|benchmark``."""
import argparse
import json
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import analysis, report, simulate
from .model import DimensionError
from .observer import GainDesignError, UnstableObserverError
from .scenario import BENCHMARKS, ScenarioError, load_scenario, save_scenario

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _version():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    schemas = ", ".join(f"{k} v{v}" for k, v in report.schema_versions().items())
    return f"ebse {pkg} (schemas: {schemas})"


def _add_source(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", metavar="PATH", help="scenario YAML file")
    src.add_argument("--benchmark", choices=sorted(BENCHMARKS), help="built-in scenario")
    p.add_argument("--seed", type=int, help="override every random seed")
    p.add_argument("--horizon", type=int, help="override the number of steps")


def _add_output(p):
    p.add_argument("--out-dir", metavar="DIR", help="write results here")
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="csv: trace, rates, bus log and summary; json: summary only")
    p.add_argument("--engine", choices=("kernel", "agents"), default="kernel")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ebse", description="Distributed event-based state estimation simulator.")
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and export the trace")
    _add_source(p)
    _add_output(p)

    p = sub.add_parser("analyze", help="stability certificate and error bounds")
    _add_source(p)
    p.add_argument("--out-dir", metavar="DIR")

    p = sub.add_parser("verify", help="check a run, or a saved trace, against the certified bounds")
    _add_source(p)
    _add_output(p)
    p.add_argument("--trace", metavar="CSV", help="replay this trace instead of simulating")

    p = sub.add_parser("benchmark", help="run the built-in thermo-fluid benchmark")
    p.add_argument("--name", choices=sorted(BENCHMARKS), default="thermo-fluid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int)
    p.add_argument("--save-scenario", metavar="PATH", help="also write the scenario as YAML")
    _add_output(p)
    return parser


def _load(args):
    if getattr(args, "scenario", None):
        scenario = load_scenario(args.scenario)
    elif getattr(args, "benchmark", None):
        scenario = BENCHMARKS[args.benchmark]()
    else:
        raise ScenarioError("give --scenario PATH or --benchmark NAME")
    return scenario.with_overrides(seed=args.seed, horizon=args.horizon)


def _simulate(scenario, args):
    trace = simulate.run(scenario, engine=args.engine)
    rates = simulate.comm_rates(trace)
    checks = analysis.consistency_checks(scenario, trace)
    if args.out_dir:
        report.write_run(scenario, trace, rates, checks, args.out_dir, args.format)
    return trace, rates, checks


def _print_rates(rates):
    for name in rates.channels:
        print(f"  {name:<10} {rates.average[name]:.4f}")
    print(f"  overall    {rates.overall:.4f}  (reduction {1 - rates.overall:.1%})")


def cmd_run(args):
    scenario = _load(args)
    trace, rates, checks = _simulate(scenario, args)
    print(f"{scenario.name}: {scenario.horizon} steps, {trace.n_agents} agents")
    _print_rates(rates)
    print("consistency: " + ("ok" if checks["ok"] else "FAILED"))
    if not checks["ok"]:
        print(json.dumps(report._clean(checks), indent=2, sort_keys=True), file=sys.stderr)
    return EXIT_OK if checks["ok"] else EXIT_CHECK_FAILED


def _analysis(scenario):
    cert = None
    if scenario.model.n_sensors <= analysis.MAX_SUBSET_SENSORS:
        cert = analysis.check_lemma1(scenario.model, scenario.observer_gain(),
                                     scenario.lyapunov_matrix())
    return cert, analysis.bound_report(scenario, certificate=cert)


def cmd_analyze(args):
    scenario = _load(args)
    cert, bounds = _analysis(scenario)
    doc = report.analysis_document(scenario, cert, bounds)
    text = report.dumps(doc)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "analysis.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def bound_applies(scenario):
    """Whether the certified per-agent bound covers this scenario as configured."""
    reasons = []
    if scenario.drop.droppable("measurement"):
        reasons.append("measurement frames can be dropped")
    if scenario.control and scenario.input_mode == "event":
        reasons.append("inputs are event-triggered")
    if scenario.reset_period > 0:
        reasons.append("synchronous resets are enabled")
    return reasons


def _limits(scenario, bounds):
    return bounds.theorem2_e_max or [bounds.theorem1_e_max] * scenario.n_agents


def cmd_verify(args):
    scenario = _load(args)
    cert, bounds = _analysis(scenario)
    if args.trace:
        return _verify_trace(scenario, bounds, args.trace)
    trace, rates, checks = _simulate(scenario, args)
    ok = checks["ok"]
    print("consistency: " + ("ok" if checks["ok"] else "FAILED"))
    if cert is not None:
        print(f"subset LMI: {'pass' if cert.passed else 'FAIL'} "
              f"(max eigenvalue {cert.max_eigenvalue_over_subsets:.3e})")
    skip = bound_applies(scenario)
    if skip:
        print("error bound: skipped (" + "; ".join(skip) + ")")
    else:
        limits = _limits(scenario, bounds)
        err = np.linalg.norm(trace.agent_error(), axis=2).max(axis=0)
        for i, (e, b) in enumerate(zip(err, limits)):
            hold = e <= b
            ok = ok and hold
            print(f"agent {i}: sup ||e_i|| = {e:.4e} <= {b:.4e}  {'ok' if hold else 'VIOLATED'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _verify_trace(scenario, bounds, path):
    cols = report.read_trace_csv(path)
    skip = bound_applies(scenario)
    limits = None if skip else _limits(scenario, bounds)
    res = report.replay_checks(cols, scenario.measurement_trigger.delta_est,
                               scenario.n_agents, limits)
    print(f"replayed {res['steps']} steps from {path}")
    print("silent innovations below threshold: " + ("ok" if res["silent_innovations_below_threshold"] else "FAILED"))
    print("transmissions reached threshold: " + ("ok" if res["transmissions_reached_threshold"] else "FAILED"))
    if skip:
        print("error bound: skipped (" + "; ".join(skip) + ")")
    else:
        for i, (e, b) in enumerate(zip(res["sup_err"], limits)):
            print(f"agent {i}: sup ||e_i|| = {e:.4e} <= {b:.4e}  {'ok' if e <= b else 'VIOLATED'}")
    return EXIT_OK if res["ok"] else EXIT_CHECK_FAILED


def window_rates(scenario, trace):
    """Mean sensor trigger rate inside and outside the process-noise windows."""
    inside = np.zeros(trace.horizon + 1, dtype=bool)
    for a, b, _ in scenario.process_noise.windows:
        inside[a:b] = True
    trig = trace.meas_trigger[1:]
    mask = inside[1:]
    rin = float(trig[mask].mean()) if mask.any() else float("nan")
    rout = float(trig[~mask].mean()) if (~mask).any() else float("nan")
    return rin, rout


def cmd_benchmark(args):
    scenario = BENCHMARKS[args.name](seed=args.seed).with_overrides(horizon=args.horizon)
    if args.save_scenario:
        save_scenario(scenario, args.save_scenario)
    trace, rates, checks = _simulate(scenario, args)
    rin, rout = window_rates(scenario, trace)
    print(f"{scenario.name}: {scenario.horizon} steps, seed {scenario.seed}")
    _print_rates(rates)
    print(f"sensor rate inside disturbance windows {rin:.4f}, outside {rout:.4f}")
    print(f"max ||x|| {np.linalg.norm(trace.x, axis=1).max():.4f}, "
          f"dropped frames {int(trace.meas_dropped[1:].sum())}")
    print("consistency: " + ("ok" if checks["ok"] else "FAILED"))
    return EXIT_OK if checks["ok"] else EXIT_CHECK_FAILED


COMMANDS = {"run": cmd_run, "analyze": cmd_analyze, "verify": cmd_verify, "benchmark": cmd_benchmark}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, DimensionError, GainDesignError, UnstableObserverError) as exc:
        print(f"ebse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ebse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
