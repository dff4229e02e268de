"""Command-line entry point: ``clusterrec {train,build-shortlist,recommend,eval,inspect}``.

Exit codes: 0 ok, 2 input error, 3 artifact mismatch, 4 numeric failure.
The log level is read from ``CLUSTERREC_LOG`` (default ``INFO``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from clusterrec.clustering import (
    build_shortlist,
    read_shortlist,
    write_shortlist_bin,
    write_shortlist_csv,
)
from clusterrec.config import RunConfig, load_config
from clusterrec.dataset import (
    ItemCatalog,
    RatingsDataset,
    UserRecord,
    assign_group_labels,
    attach_demographics,
    load_demographics,
    load_items,
    load_ratings,
)
from clusterrec.errors import ArtifactMismatch, DataError, NumericalError
from clusterrec.eval import benchmark
from clusterrec.model import (
    MODEL_MAGIC,
    load_model,
    param_count,
    read_model_header,
    save_model,
)
from clusterrec.recommender import recommend_batch, write_recommendations_csv
from clusterrec.training import train, write_loss_csv

log = logging.getLogger("clusterrec")

EXIT_OK, EXIT_INPUT, EXIT_MISMATCH, EXIT_NUMERIC = 0, 2, 3, 4


def _require(path, what: str) -> Path:
    if not path:
        raise DataError(f"no {what} path configured")
    path = Path(path)
    if not path.exists():
        raise DataError(f"{what} file not found: {path}")
    return path


def load_inputs(cfg: RunConfig):
    """``(catalog, dataset, demographics by user)`` from the configured files."""
    catalog = load_items(_require(cfg.data.items, "items"))
    dataset = load_ratings(_require(cfg.data.ratings, "ratings"), catalog, cfg.data.scale,
                           cfg.data.implicit)
    demo: dict = {}
    if cfg.data.demographics:
        demo, dim = load_demographics(_require(cfg.data.demographics, "demographics"))
        dataset = attach_demographics(dataset, demo, dim)
    return catalog, dataset, demo


def _workers(cfg: RunConfig) -> int:
    return cfg.parallelism or os.cpu_count() or 1


def _load_model_checked(cfg: RunConfig, catalog: ItemCatalog, dataset: RatingsDataset):
    params, header = load_model(_require(cfg.output.path("model"), "model"))
    if params.n_items != catalog.n_items or params.feat_dim != catalog.n_features:
        raise ArtifactMismatch(
            f"model expects {params.n_items} items x {params.feat_dim} features, catalog has "
            f"{catalog.n_items} x {catalog.n_features}"
        )
    if params.demo_dim != dataset.demo_dim:
        raise ArtifactMismatch(
            f"model expects {params.demo_dim} demographic columns, data has {dataset.demo_dim}"
        )
    scale = header.get("rating_scale")
    expected = None if cfg.data.scale is None else list(cfg.data.scale)
    if scale != expected:
        raise ArtifactMismatch(f"model trained with rating scale {scale}, config has {expected}")
    return params, header


def cmd_train(cfg: RunConfig, args) -> int:
    catalog, dataset, _ = load_inputs(cfg)
    if catalog.category_columns():
        dataset = assign_group_labels(dataset, catalog)
    params, history = train(dataset, catalog, cfg.train, cfg.model.build())
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(cfg.output.path("model"), params, cfg.data.scale,
               {"config": cfg.to_dict(), "users_seen": len(dataset)})
    write_loss_csv(cfg.output.path("loss"), history)
    print(f"params: {param_count(params)}")
    print(f"model: {cfg.output.path('model')}")
    if history:
        print(f"loss: first epoch {history[0].mean_loss:.6f}, last epoch "
              f"{history[-1].mean_loss:.6f}")
    return EXIT_OK


def cmd_build_shortlist(cfg: RunConfig, args) -> int:
    catalog, dataset, _ = load_inputs(cfg)
    params, _ = _load_model_checked(cfg, catalog, dataset)
    workers = _workers(cfg)
    parts = cfg.shortlist.parts or (1 if cfg.deterministic else workers)
    t0 = time.perf_counter()
    sl = build_shortlist(params, catalog, dataset.users, cfg.shortlist.k, cfg.shortlist.prune_top,
                         n_parts=parts, workers=workers)
    elapsed = time.perf_counter() - t0
    meta = {"config": cfg.to_dict(), "cluster_sizes": sl.sizes().tolist()}
    Path(cfg.output.dir).mkdir(parents=True, exist_ok=True)
    write_shortlist_csv(cfg.output.path("shortlist"), sl, meta)
    write_shortlist_bin(cfg.output.path("shortlist_bin"), sl, meta)
    sizes = sl.sizes()
    log.info("shortlist built in %.3fs over %d parts; cluster sizes %s", elapsed, parts,
             sizes.tolist())
    print(f"shortlist: {cfg.output.path('shortlist')} ({int(sizes.sum())} entries, "
          f"{int((sizes > 0).sum())}/{sizes.size} clusters nonempty, {elapsed:.3f}s)")
    return EXIT_OK


def _read_keys(path) -> list[str]:
    lines = _require(path, "user list").read_text().splitlines()
    return [line.strip() for line in lines if line.strip()]


def cmd_recommend(cfg: RunConfig, args) -> int:
    catalog, dataset, demo = load_inputs(cfg)
    params, _ = _load_model_checked(cfg, catalog, dataset)
    shortlist, _ = read_shortlist(_require(cfg.output.path("shortlist"), "shortlist"))
    keys = [args.user] if args.user else _read_keys(args.users)
    index = dataset.key_index()
    users, found = [], []
    for key in keys:
        if key in index:
            users.append(dataset.users[index[key]])
        elif key in demo:
            # no history: demographics alone place the user
            users.append(UserRecord(key, [], [], [], demo[key]))
        else:
            log.warning("unknown user %r skipped", key)
            continue
        found.append(key)
    recs = recommend_batch(params, catalog, shortlist, users, cfg.shortlist.k,
                           cfg.recommend.top_n, cfg.recommend.exclude_seen)
    rows = zip(found, recs)
    if args.user:
        write_recommendations_csv(sys.stdout, rows, catalog.item_ids)
        return EXIT_OK
    out = Path(args.out) if args.out else cfg.output.path("recommendations")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        n = write_recommendations_csv(fh, rows, catalog.item_ids)
    print(f"recommendations for {n} users: {out}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    catalog, dataset, _ = load_inputs(cfg)
    report = benchmark(dataset, catalog, cfg.benchmark_config())
    Path(cfg.output.dir).mkdir(parents=True, exist_ok=True)
    report.write_csv(cfg.output.path("report"))
    if cfg.eval.per_user:
        report.write_per_user(cfg.output.path("per_user"))
    print(report.table())
    print(f"report: {cfg.output.path('report')}")
    return EXIT_OK


def cmd_inspect(cfg: RunConfig, args) -> int:
    path = _require(args.path, "artifact")
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
    if magic == MODEL_MAGIC:
        header = read_model_header(path)
    else:
        _, header = read_shortlist(path)
    print(json.dumps(header, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "build-shortlist": cmd_build_shortlist,
    "recommend": cmd_recommend,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="JSON run configuration")
    common.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. train.epochs=5 (repeatable)")
    common.add_argument("--deterministic", action="store_true",
                        help="fixed-order reductions for byte-identical artifacts")
    common.add_argument("--workers", type=int, help="worker threads (default: all cores)")

    parser = argparse.ArgumentParser(prog="clusterrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the preference model")
    sub.add_parser("build-shortlist", parents=[common], help="build per-cluster shortlists")
    rec = sub.add_parser("recommend", parents=[common], help="recommend for users")
    who = rec.add_mutually_exclusive_group(required=True)
    who.add_argument("--user", help="single user key; prints CSV to stdout")
    who.add_argument("--users", help="file with one user key per line")
    rec.add_argument("--out", help="output CSV (default: output.recommendations)")
    sub.add_parser("eval", parents=[common], help="run the offline benchmark")
    ins = sub.add_parser("inspect", parents=[common], help="print a model or shortlist header")
    ins.add_argument("path")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CLUSTERREC_LOG", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.set)
        if args.deterministic:
            overrides.append("deterministic=true")
        if args.workers:
            overrides.append(f"parallelism={args.workers}")
        cfg = load_config(args.config, overrides)
        log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
        with np.errstate(over="ignore"):
            return COMMANDS[args.command](cfg, args)
    except ArtifactMismatch as exc:
        log.error("artifact mismatch: %s", exc)
        return EXIT_MISMATCH
    except NumericalError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
