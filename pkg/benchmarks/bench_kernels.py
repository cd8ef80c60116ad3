#!/usr/bin/env python
"""Time the hot kernels on the numba and pure-Python backends.

The Python timings come from a child process started with
VPPWIENER_DISABLE_NUMBA=1, so nested kernel calls are uncompiled as well.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --samples 5000 --repeat 5
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _cases(n):
    from vppwiener import kernels
    from vppwiener.control import PUBLISHED_COMBINED
    from vppwiener.model import PUBLISHED_FINAL as p
    from vppwiener.plant import AeroMaps, LowLevelGains, PlantParams, simulate_plant

    rng = np.random.default_rng(0)
    u_w = np.repeat(rng.uniform(1 / 3, 1, n // 250 + 1), 250)[:n].copy()
    u_b = np.repeat(rng.uniform(0, 1, n // 250 + 1), 250)[:n].copy()
    x0 = np.array([u_w[0], u_b[0], u_w[0], u_b[0]])
    _, y = kernels.wiener_run(p.taus, p.coeffs, x0, u_w, u_b, 0.004)
    sp = np.where(np.arange(n) < n // 2, 0.2, 0.7)
    gains = PUBLISHED_COMBINED.to_vector()
    lim = np.array([1 / 3, 1.0, 0.0, 1.0])
    rig = PlantParams(), AeroMaps(), LowLevelGains()
    w_rpm = 6000 * u_w[: n // 4]
    b_deg = 15 * u_b[: n // 4] - 5

    return {
        "wiener_run": lambda: kernels.wiener_run(p.taus, p.coeffs, x0, u_w, u_b, 0.004),
        "wiener_cost_grad": lambda: kernels.wiener_cost_grad(p.taus, p.coeffs, x0, u_w, u_b,
                                                             y, 0.004, True),
        "closed_loop_ise": lambda: kernels.closed_loop_ise(p.taus, p.coeffs, x0, sp, gains,
                                                           x0[:2].copy(), lim, 0.004, 0.02),
        "plant (n/4 samples)": lambda: simulate_plant(*rig, w_rpm, b_deg, 0.004),
    }


def _time_all(n, repeat):
    out = {}
    for name, fn in _cases(n).items():
        fn()  # compile / warm up
        best = np.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.worker:
        print(json.dumps(_time_all(args.samples, args.repeat)))
        return

    from vppwiener import backend_name
    if backend_name() != "numba":
        sys.exit("numba backend not active; unset VPPWIENER_DISABLE_NUMBA")
    fast = _time_all(args.samples, args.repeat)
    env = dict(os.environ, VPPWIENER_DISABLE_NUMBA="1")
    child = subprocess.run([sys.executable, __file__, "--worker", "--samples",
                            str(args.samples), "--repeat", "1"],
                           env=env, capture_output=True, text=True, check=True)
    slow = json.loads(child.stdout)

    print(f"{args.samples} samples, best of {args.repeat} (numba) / 1 (python)")
    print(f"{'kernel':<22}{'numba [ms]':>12}{'python [ms]':>14}{'speedup':>10}")
    for name in fast:
        print(f"{name:<22}{1e3 * fast[name]:>12.2f}{1e3 * slow[name]:>14.1f}"
              f"{slow[name] / fast[name]:>9.0f}x")


if __name__ == "__main__":
    main()
