#!/usr/bin/env python3
"""Download and convert MovieLens-100K into data/ml-100k (or $CLUSTERREC_ML100K)."""
import argparse
import logging

from clusterrec.movielens import ensure_ml100k

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dest", help="output directory")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)
    print(ensure_ml100k(args.dest))
