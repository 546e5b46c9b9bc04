"""Per-query cost of the exact 1-D KDE against the kernel-mean-map path.

    python scripts/bench_kde_speed.py --dim 2048 --queries 500
"""

import argparse
import time

import numpy as np

from dfax.kde import ExactKde1D, GaussianKernelParams, approx_density, build_feature_map, mean_map


def best_of(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=2048)
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--queries", type=int, default=500)
    ap.add_argument("--sizes", default="1000,10000,100000,1000000")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    params = GaussianKernelParams(args.gamma)
    fmap = build_feature_map(params, args.dim, seed=0)
    q = rng.standard_normal(args.queries)
    print(f"{'n':>9}{'exact us/q':>12}{'map us/q':>10}{'speedup':>9}{'precompute s':>14}{'max err':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        support = rng.standard_normal(n)
        exact = ExactKde1D(support, params)
        t_pre = best_of(lambda: mean_map(fmap, support), repeats=1)
        mm = mean_map(fmap, support)
        t_exact = best_of(lambda: exact.density(q)) / q.size
        t_map = best_of(lambda: approx_density(mm, fmap, q)) / q.size
        err = np.max(np.abs(approx_density(mm, fmap, q) - exact.density(q)))
        print(f"{n:>9}{t_exact * 1e6:>12.1f}{t_map * 1e6:>10.2f}{t_exact / t_map:>9.0f}{t_pre:>14.3f}{err:>10.1e}")


if __name__ == "__main__":
    main()
