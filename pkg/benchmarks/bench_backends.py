"""Compare the compiled and pure-Python search kernels.

Builds one forest, then runs the same batch of queries through every
importable backend at several budgets. Results must match exactly; only
the wall time should differ.

    python benchmarks/bench_backends.py --points 20000 --dim 32
"""

import argparse
import time

import numpy as np

from lnbnn import _backend
from lnbnn.ann import BruteForceIndex, ForestConfig, build_forest


def best_of(fn, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=20_000)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--trees", type=int, default=4)
    p.add_argument("--budgets", default="32,128,512")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    data = rng.random((args.points, args.dim))
    queries = rng.random((args.queries, args.dim))
    forest = build_forest(data, ForestConfig(num_trees=args.trees, rng_seed=args.seed))
    backends = _backend.available()
    saved = _backend.kernels

    print(f"{args.points} points x {args.dim} dims, {args.queries} queries, k={args.k}, "
          f"{args.trees} trees; backends: {', '.join(sorted(backends))}")
    print(f"{'search':>12} {'backend':>8} {'seconds':>10} {'us/query':>10} {'speed-up':>9} {'match':>6}")
    try:
        jobs = [("brute", lambda: BruteForceIndex(data).knn(queries, args.k))]
        jobs += [(f"forest@{c}", lambda c=c: forest.knn(queries, args.k, c))
                 for c in (int(v) for v in args.budgets.split(","))]
        for label, job in jobs:
            timings = {}
            results = {}
            for name in sorted(backends, reverse=True):  # python first, as the baseline
                _backend.kernels = backends[name]
                timings[name], results[name] = best_of(job, args.repeats)
            ref = results["python"]
            for name in sorted(timings, reverse=True):
                same = all(np.array_equal(a, b) for a, b in zip(results[name], ref))
                print(f"{label:>12} {name:>8} {timings[name]:10.4f} "
                      f"{1e6 * timings[name] / args.queries:10.1f} "
                      f"{timings['python'] / timings[name]:8.1f}x {'yes' if same else 'NO':>6}")
    finally:
        _backend.kernels = saved


if __name__ == "__main__":
    main()
