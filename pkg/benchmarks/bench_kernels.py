"""Time the compiled DP kernel against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--steps 0.16 0.08 0.04] [--repeat 3]

Both backends solve the same truncated-exponential instance; the script
also checks that decisions match and values agree to rounding.
"""
import argparse
import time

import numpy as np

from qaoi.delays import parse_distribution
from qaoi.kernels import available_backends
from qaoi.penalty import identity
from qaoi.solver import solve_pair


def best_of(repeat, fn):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dist", default="exp:lambda=1")
    ap.add_argument("--steps", type=float, nargs="+", default=[0.16, 0.08, 0.04])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    dist = parse_distribution(args.dist)
    Q = 4.0 * dist.b_hi
    backends = available_backends()
    if "compiled" not in backends:
        print("compiled kernel not built; only the fallback will be timed")
    print(f"{'step':>8} {'N':>6} {'evaluations':>12} " + " ".join(f"{b + ' [s]':>14}" for b in backends)
          + (f" {'speedup':>8}" if len(backends) == 2 else ""))
    for step in args.steps:
        n = int(round(Q / step))
        timings, sols = {}, {}
        for b in backends:
            timings[b], sols[b] = best_of(args.repeat, lambda b=b: solve_pair(dist, identity(), Q, n, backend=b))
        line = f"{Q / n:8.4f} {n:6d} {sols[backends[0]][0].evaluations:12d} "
        line += " ".join(f"{timings[b]:14.4f}" for b in backends)
        if len(backends) == 2:
            a, c = sols["compiled"], sols["python"]
            for x, y in zip(a, c):
                if not (np.allclose(x.gd_table, y.gd_table, rtol=1e-12, atol=1e-12)
                        and np.array_equal(x.decision, y.decision)):
                    raise SystemExit(f"backends disagree at N={n}")
            line += f" {timings['python'] / timings['compiled']:8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
