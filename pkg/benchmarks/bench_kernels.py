"""Compare numba-compiled kernels with the pure-numpy fallback.

Each variant runs in its own interpreter because ``EBSE_DISABLE_NUMBA`` is
read at import time. Compilation is warmed up before timing, and the two
variants must produce bit-identical traces.

    python3 benchmarks/bench_kernels.py [--horizon 2000] [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import hashlib, json, sys, time
import numpy as np
import ebse
from ebse import analysis, simulate
from ebse.observer import design_kalman_gain, design_lqr_gain

horizon, repeat = int(sys.argv[1]), int(sys.argv[2])
sc = ebse.builtin_benchmark().with_overrides(horizon=horizon)
model, gain, P = sc.model, sc.observer_gain(), sc.lyapunov_matrix()

def best(fn):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter(); fn(); times.append(time.perf_counter() - t0)
    return min(times)

out = {"numba": ebse.NUMBA_ENABLED}
out["simulate"] = best(lambda: simulate.run(sc))
out["subset_lmi"] = best(lambda: analysis.check_lemma1(model, gain, P))
out["riccati"] = best(lambda: (design_kalman_gain(model, np.eye(4), np.eye(4)),
                               design_lqr_gain(model, np.eye(4), np.eye(4))))
tr = simulate.run(sc)
out["rates"] = best(lambda: simulate.comm_rates(tr))
h = hashlib.sha256()
for a in (tr.x, tr.x_filt, tr.u, tr.meas_trigger, tr.meas_delivered):
    h.update(np.ascontiguousarray(a).tobytes())
out["digest"] = h.hexdigest()
print(json.dumps(out))
"""


def child(disable, horizon, repeat):
    env = dict(os.environ, EBSE_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", CHILD, str(horizon), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    jit = child(False, args.horizon, args.repeat)
    ref = child(True, args.horizon, args.repeat)
    if not jit["numba"]:
        print("numba is unavailable; both runs used the fallback")
    print(f"thermo-fluid benchmark, horizon {args.horizon}, best of {args.repeat}")
    print(f"{'kernel':<12}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for key in ("simulate", "subset_lmi", "riccati", "rates"):
        print(f"{key:<12}{jit[key]:>12.4f}{ref[key]:>12.4f}{ref[key] / jit[key]:>9.1f}x")
    same = jit["digest"] == ref["digest"]
    print("traces identical:", "yes" if same else "NO")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
