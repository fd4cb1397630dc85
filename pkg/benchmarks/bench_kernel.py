"""Compiled vs pure-Python gate-train kernel.

    python benchmarks/bench_kernel.py [--pulses N] [--gates G] [--repeat R]

Both backends get the same uniforms; the script checks the counts agree
before timing.
"""
import argparse
import math
import time

import numpy as np

from nuotdr import _kernel_py

try:
    from nuotdr import _kernel as _kernel_c
except ImportError:
    _kernel_c = None


def make_inputs(n_pulses, n_gates, seed=0):
    rng = np.random.default_rng(seed)
    starts = 1e-6 * np.arange(n_gates)
    return dict(
        starts=starts,
        bins=np.arange(n_gates, dtype=np.int64),
        h_sig=rng.uniform(0.0, 0.3, n_gates),
        h_dark=2e-4,
        h_pers=np.zeros(n_gates),
        width=100e-9,
        period=1e-3,
        first_pulse=0,
        dead_time=1e-6,
        a0=0.1,
        tau_trap=2e-6,
        m=10.0,
        u=rng.random((n_pulses, n_gates)),
    )


def run(impl, kw):
    n = len(kw["starts"])
    out = [np.array([0.0, 0.0, -math.inf])] + [np.zeros(n, np.int64) for _ in range(3)] + [np.zeros((n, 4), np.int64)]
    impl.simulate_block(
        kw["starts"], kw["bins"], kw["h_sig"], kw["h_dark"], kw["h_pers"], kw["width"], kw["period"], kw["first_pulse"],
        kw["dead_time"], kw["a0"], kw["tau_trap"], kw["m"], kw["u"], *out,
    )
    return out


def best_of(impl, kw, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        run(impl, kw)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pulses", type=int, default=2000)
    ap.add_argument("--gates", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    kw = make_inputs(args.pulses, args.gates)
    draws = args.pulses * args.gates
    print(f"{args.pulses} pulses x {args.gates} gates = {draws:.2e} gate draws")
    t_py = best_of(_kernel_py, kw, args.repeat)
    print(f"python : {t_py:8.4f} s  ({draws / t_py:.3e} gates/s)")
    if _kernel_c is None:
        print("cython : extension not built")
        return
    a, b = run(_kernel_py, kw), run(_kernel_c, kw)
    assert all(np.array_equal(x, y) for x, y in zip(a, b)), "backends disagree"
    t_c = best_of(_kernel_c, kw, args.repeat)
    print(f"cython : {t_c:8.4f} s  ({draws / t_c:.3e} gates/s)")
    print(f"speedup: {t_py / t_c:.1f}x (identical counts)")


if __name__ == "__main__":
    main()
