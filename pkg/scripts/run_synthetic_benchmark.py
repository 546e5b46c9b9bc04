"""Deletion/insertion benchmark on the synthetic sign-of-x0 task.

    python scripts/run_synthetic_benchmark.py --targets 100 --trials 20
"""

import argparse
import time

import numpy as np

from dfax.core import LabelVector, standardize
from dfax.datasets import make_sign_dataset
from dfax.evaluation import (
    BenchmarkDataset,
    DfaxMethod,
    PfiMethod,
    RandomMethod,
    ShapleySamplingMethod,
    TrialConfig,
    run_benchmark,
)
from dfax.kde import GaussianKernelParams
from dfax.model import train_builtin
from dfax.sinne import SinneParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--targets", type=int, default=100)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    x, y = make_sign_dataset(args.n + args.targets, args.d, args.seed)
    data, std = standardize(x[: args.n])
    model = train_builtin("logistic", data, LabelVector(y[: args.n], 2), seed=args.seed)
    ds = BenchmarkDataset("sign", data, std.apply(x[args.n :]))
    methods = [
        DfaxMethod("exact-gaussian", GaussianKernelParams(1.0), args.seed),
        DfaxMethod("feature-map-gaussian", {"gamma": 1.0, "dimension": 2048}, args.seed),
        DfaxMethod("sinne", SinneParams(2, 1000, args.seed), args.seed),
        ShapleySamplingMethod(64, 100, args.seed),
        PfiMethod(5, args.seed),
        RandomMethod(args.seed),
    ]
    t0 = time.perf_counter()
    report = run_benchmark(methods, [ds], [model], TrialConfig(args.trials, args.seed), jobs=args.jobs)
    print(f"{'method':<28}{'deletion':>10}{'insertion':>11}{'s/instance':>12}")
    for m in report.methods:
        c = report.cell(m, "sign")
        if not c.ok:
            print(f"{m:<28} failed: {c.error}")
            continue
        print(f"{m:<28}{c.deletion:>10.4f}{c.insertion:>11.4f}{c.seconds_per_instance:>12.2e}")
    print(f"total {time.perf_counter() - t0:.1f}s")
    base = report.cell("random", "sign")
    best = report.cell("dfax-exact-gaussian", "sign")
    print(f"margins vs random: deletion {base.deletion - best.deletion:+.4f}, "
          f"insertion {best.insertion - base.insertion:+.4f}")
    assert np.isfinite(best.deletion)


if __name__ == "__main__":
    main()
