"""Compare the compiled and pure-Python PSGD kernels.

Usage: python benchmarks/bench_psgd.py [steps] [repeats]

The Python backend runs 1/20 of the steps; throughput is reported per step
so the two rows are comparable.
"""

import sys

import numpy as np

from trunc_estim.cli import bench_psgd


def main(steps=200_000, repeats=3):
    rows = bench_psgd(steps=steps, repeats=repeats)
    by = {}
    for r in rows:
        by.setdefault(r["backend"], []).append(r["steps_per_second"])
    print(f"{'backend':<10} {'steps/s (median)':>18}")
    for name, v in by.items():
        print(f"{name:<10} {np.median(v):>18,.0f}")
    if len(by) == 2:
        print(f"speedup: {np.median(by['compiled']) / np.median(by['python']):.1f}x")


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
