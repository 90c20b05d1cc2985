"""Time the compiled kernels against the plain-numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import time (``DIMM_DISABLE_NUMBA``).  Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--steps 500]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def workloads(steps):
    from dimm import kernels
    from dimm.agent import BankConfig, make_track
    from dimm.datagen import GenConfig, gen_multi_model, lorenz_states
    from dimm.filter_bank import bank_run
    from dimm.imm import default_transition, imm_run

    bank = BankConfig()
    traj = gen_multi_model(GenConfig(length=steps), 0)
    zs = traj.measurements
    specs = bank.bank_specs(traj.dt)
    imm_specs = bank.imm_specs(traj.dt)
    Pi = default_transition(3, bank.imm_stay)
    return {
        "bank_run (3 KFs)": lambda: bank_run(specs, zs, bank.p0_scale),
        "imm_run": lambda: imm_run(imm_specs, zs, bank.p0_scale, Pi, pad_var=bank.pad_var),
        "lorenz_rk4": lambda: lorenz_states([1.0, 1.0, 20.0], 0.01, steps * 10),
        "make_track (L=10)": lambda: make_track(traj, bank, 10),
        "cholesky 9x9": lambda: kernels.chol_solve(
            kernels.chol_inplace(np.eye(9) * 4.0 + 0.1)[0], np.ones((9, 3))),
    }


def worker(repeat, steps):
    from dimm._jit import backend_name
    out = {"backend": backend_name(), "times": {}}
    for name, fn in workloads(steps).items():
        fn()  # compile / warm caches
        out["times"][name] = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(json.dumps(out))


def run_backend(disable, repeat, steps):
    env = dict(os.environ, DIMM_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat),
                          "--steps", str(steps)], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    a = ap.parse_args()
    if a.worker:
        worker(a.repeat, a.steps)
        return
    fast = run_backend(False, a.repeat, a.steps)
    slow = run_backend(True, a.repeat, a.steps)
    print(f"{'kernel':<20}{fast['backend'] + ' [ms]':>14}{slow['backend'] + ' [ms]':>14}{'speedup':>10}")
    for name in fast["times"]:
        tf, ts = fast["times"][name], slow["times"][name]
        print(f"{name:<20}{tf * 1e3:>14.3f}{ts * 1e3:>14.3f}{ts / tf:>9.1f}x")


if __name__ == "__main__":
    main()
