"""Compare the compiled and pure-Python set-function kernels.

    python benchmarks/bench_kernels.py [--sizes 8 10 12] [--repeat 3]

Tables are random nonincreasing functions with some infeasible sets.
"""
import argparse
import time

import numpy as np

from vcgratio import _kernels_py

try:
    from vcgratio import _kernels as _compiled
except ImportError:
    _compiled = None


def random_table(n, rng):
    size = 1 << n
    J = rng.uniform(0, 100, size)
    for i in range(n):
        bit = 1 << i
        for m in range(size):
            if not m & bit:
                J[m] = max(J[m], J[m | bit])
    caps = rng.integers(1, 5, n)
    need = caps.sum() // 2
    for m in range(size):
        if sum(int(caps[i]) for i in range(n) if m >> i & 1) < need:
            J[m] = np.inf
    return J


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t)
    return min(times), result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[6, 8, 10, 12])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _compiled is None:
        print("compiled extension not built; only the Python kernels are timed")
    rng = np.random.default_rng(args.seed)
    print(f"{'n':>3} {'kernel':<22} {'python s':>10} {'compiled s':>11} {'speedup':>8}")
    for n in args.sizes:
        J = random_table(n, rng)
        zt = 1e-9 * (1 + np.abs(J[np.isfinite(J)]).max())
        calls = {
            "ratio_scan": lambda m: m.ratio_scan(J, n, zt),
            "max_violation": lambda m: m.max_violation(J, n, 0.8, zt),
            "supermodular_violation": lambda m: m.supermodular_violation(J, n, zt),
        }
        for name, call in calls.items():
            tp, rp = best_of(lambda: call(_kernels_py), args.repeat)
            if _compiled is None:
                print(f"{n:>3} {name:<22} {tp:>10.4f} {'-':>11} {'-':>8}")
                continue
            tc, rc = best_of(lambda: call(_compiled), args.repeat)
            assert rp == rc, f"{name} results differ at n={n}"
            print(f"{n:>3} {name:<22} {tp:>10.4f} {tc:>11.5f} {tp / tc:>7.0f}x")


if __name__ == "__main__":
    main()
