"""Average deletion/insertion ranks across several benchmark reports.

Each report.csv (as written by ``dfax benchmark``) holds one dataset; the
table ranks methods per dataset and averages, ties sharing the mean rank.

    python scripts/rank_table.py runs/*/report.csv
"""

import argparse
import csv

import numpy as np

from dfax.evaluation import average_ranks


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("reports", nargs="+")
    args = ap.parse_args()

    scores = {}
    for path in args.reports:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["error"]:
                    continue
                scores.setdefault(row["method"], {})[row["dataset"]] = (float(row["deletion"]), float(row["insertion"]))
    methods = sorted(scores)
    datasets = sorted(set.intersection(*(set(v) for v in scores.values())))
    if not datasets:
        raise SystemExit("no dataset has results for every method")
    dmat = np.array([[scores[m][ds][0] for m in methods] for ds in datasets])
    imat = np.array([[scores[m][ds][1] for m in methods] for ds in datasets])
    drank = average_ranks(dmat, lower_is_better=True)
    irank = average_ranks(imat, lower_is_better=False)
    print(f"{len(datasets)} datasets")
    print(f"{'method':<28}{'deletion':>10}{'del.rank':>10}{'insertion':>11}{'ins.rank':>10}")
    for j, m in enumerate(methods):
        print(f"{m:<28}{dmat[:, j].mean():>10.4f}{drank[j]:>10.1f}{imat[:, j].mean():>11.4f}{irank[j]:>10.1f}")


if __name__ == "__main__":
    main()
