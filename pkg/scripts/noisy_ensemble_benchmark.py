#!/usr/bin/env python3
"""Medoid selection vs. a uniformly chosen single model on synthetic caption ensembles.

Sweeps seeds and hash-TF dimensions; prints one row per setting and optionally
writes the rows as JSON.

    python scripts/noisy_ensemble_benchmark.py --trials 1000 --seeds 0 1 2 --dims 64 256
"""

import argparse
import json
import statistics
import time

from esp.benchmark import run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--dims", type=int, nargs="+", default=[32, 64, 256])
    ap.add_argument("--json", help="write rows here")
    args = ap.parse_args()

    rows = []
    print(f"{'dim':>5} {'seed':>5} {'medoid':>8} {'single':>8} {'gain':>7} {'secs':>6}")
    for dim in args.dims:
        for seed in args.seeds:
            t0 = time.perf_counter()
            r = run_benchmark(args.trials, seed=seed, dimension=dim)
            secs = time.perf_counter() - t0
            gain = 100 * (r.pipeline_accuracy - r.baseline_accuracy)
            rows.append({"dimension": dim, "seed": seed, "medoid": r.medoid_accuracy,
                         "pipeline": r.pipeline_accuracy, "single_model": r.baseline_accuracy, "seconds": secs})
            print(f"{dim:>5} {seed:>5} {r.medoid_accuracy:>8.2%} {r.baseline_accuracy:>8.2%} {gain:>7.1f} {secs:>6.2f}")
        accs = [row["medoid"] for row in rows if row["dimension"] == dim]
        print(f"{dim:>5} {'mean':>5} {statistics.fmean(accs):>8.2%}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
