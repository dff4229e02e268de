#!/usr/bin/env python3
"""Run the offline benchmark on MovieLens-100K and print the comparison table.

    python scripts/run_benchmark.py                      # unpruned shortlists
    python scripts/run_benchmark.py --prune 16 --seeds 0 1 2
"""
import argparse
import logging

from clusterrec.cli import load_inputs
from clusterrec.config import load_config
from clusterrec.eval import benchmark
from clusterrec.movielens import ensure_ml100k

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    ap.add_argument("-c", "--config", default="configs/ml100k.json")
    ap.add_argument("--prune", type=int, help="shortlist.prune_top override")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    root = ensure_ml100k()
    for seed in args.seeds:
        overrides = [f"data.ratings={root / 'ratings.csv'}", f"data.items={root / 'items.csv'}",
                     f"data.demographics={root / 'demographics.csv'}", f"eval.seed={seed}",
                     f"train.seed={seed}", f"model.seed={seed}"]
        if args.prune:
            overrides.append(f"shortlist.prune_top={args.prune}")
        cfg = load_config(args.config, overrides)
        catalog, dataset, _ = load_inputs(cfg)
        report = benchmark(dataset, catalog, cfg.benchmark_config())
        print(f"seed {seed}, prune_top={cfg.shortlist.prune_top}, k={cfg.shortlist.k}")
        print(report.table())
