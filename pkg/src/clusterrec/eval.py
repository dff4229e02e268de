"""Offline evaluation: precision@k on held-out interactions, plus cost counters."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from clusterrec.baselines import als_recommend, als_train, liked_counts, popularity_recommend
from clusterrec.clustering import build_shortlist
from clusterrec.dataset import (
    ItemCatalog,
    RatingsDataset,
    UserRecord,
    assign_group_labels,
    holdout,
    split_dataset,
)
from clusterrec.model import ModelConfig, param_count
from clusterrec.recommender import Recommendation, recommend_batch, scored_candidates_count
from clusterrec.training import TrainConfig, train

log = logging.getLogger(__name__)

METHODS = ("er_interaction", "er_group", "als", "popularity")


def precision_at_k(recommended, target_items, target_ratings, k: int) -> float | None:
    """Share of liked items among the top-``k`` recommendations rated in the target.

    Returns ``None`` when none of the top-``k`` items was rated in the target.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    top = np.asarray(recommended, dtype=np.int64)[:k]
    target_items = np.asarray(target_items, dtype=np.int64)
    target_ratings = np.asarray(target_ratings, dtype=np.float64)
    rated = np.isin(top, target_items)
    denom = int(rated.sum())
    if denom == 0:
        return None
    liked = np.isin(top, target_items[target_ratings > 0])
    return int(liked.sum()) / denom


def mean_precision(values: Sequence[float | None]) -> tuple[float, int, int]:
    """``(mean over defined values, defined count, excluded count)``; mean is nan if none."""
    defined = [v for v in values if v is not None]
    mean = float(np.mean(defined)) if defined else float("nan")
    return mean, len(defined), len(values) - len(defined)


@dataclass(frozen=True)
class BenchmarkConfig:
    methods: tuple[str, ...] = METHODS
    warmup_frac: float = 0.5
    mask_frac: float = 0.25
    split_mode: str = "random"
    seed: int = 0
    precision_k: int = 50
    top_n: int = 50
    clusters_per_user: int = 3
    prune_top: int | None = None
    exclude_seen: bool = True
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    als_factors: int = 32
    als_reg: float = 0.1
    als_sweeps: int = 15
    timing_repeats: int = 3


@dataclass
class MethodResult:
    method: str
    precision: float = float("nan")
    users_evaluated: int = 0
    users_excluded: int = 0
    train_time: float = float("nan")
    inference_time: float = float("nan")
    param_count: int = 0
    scored_per_user_mean: float = 0.0
    scored_per_user_max: int = 0
    error: str | None = None
    per_user: dict[str, float | None] = field(default_factory=dict, repr=False)
    extras: dict = field(default_factory=dict, repr=False)


@dataclass
class EvalReport:
    results: list[MethodResult]
    config: BenchmarkConfig

    COLUMNS = ("method", "precision", "users_evaluated", "users_excluded", "train_time",
               "inference_time", "param_count", "scored_per_user_mean", "scored_per_user_max",
               "error")

    def __getitem__(self, method: str) -> MethodResult:
        for r in self.results:
            if r.method == method:
                return r
        raise KeyError(method)

    def rows(self) -> list[dict]:
        return [{c: getattr(r, c) for c in self.COLUMNS} for r in self.results]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: "" if v is None else v for k, v in row.items()})

    def write_per_user(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "user", "precision"])
            for r in self.results:
                for user, v in r.per_user.items():
                    w.writerow([r.method, user, "" if v is None else repr(v)])

    def table(self) -> str:
        out = io.StringIO()
        head = f"{'method':<16}{'p@k':>8}{'users':>7}{'excl':>6}{'train s':>10}" \
               f"{'infer s':>10}{'params':>10}{'scored/u':>10}"
        print(head, file=out)
        print("-" * len(head), file=out)
        for r in self.results:
            if r.error:
                print(f"{r.method:<16} failed: {r.error}", file=out)
                continue
            print(f"{r.method:<16}{r.precision:>8.4f}{r.users_evaluated:>7}{r.users_excluded:>6}"
                  f"{r.train_time:>10.2f}{r.inference_time:>10.3f}{r.param_count:>10}"
                  f"{r.scored_per_user_mean:>10.1f}", file=out)
        return out.getvalue()


def _timed(fn: Callable, repeats: int = 1):
    """Run ``fn`` ``repeats`` times; returns (last result, median wall seconds)."""
    times, result = [], None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return result, statistics.median(times)


def _score(result: MethodResult, keys, recs: Sequence[Recommendation], targets, k: int):
    values = []
    for key, rec, tgt in zip(keys, recs, targets):
        v = precision_at_k(rec.items, tgt.items, tgt.ratings, k)
        result.per_user[key] = v
        values.append(v)
    result.precision, result.users_evaluated, result.users_excluded = mean_precision(values)
    scored = [rec.n_scored for rec in recs]
    result.scored_per_user_mean = float(np.mean(scored)) if scored else 0.0
    result.scored_per_user_max = int(max(scored, default=0))


def _run_er(result, strategy, train_ds, train_splits, eval_users, catalog, cfg):
    tcfg = dataclasses.replace(cfg.train, strategy=strategy)
    (params, history), result.train_time = _timed(
        lambda: train(train_ds, catalog, tcfg, cfg.model, splits=train_splits)
    )
    t0 = time.perf_counter()
    shortlist = build_shortlist(params, catalog, train_ds.users, cfg.clusters_per_user,
                                cfg.prune_top)
    build_time = time.perf_counter() - t0
    recs, result.inference_time = _timed(
        lambda: recommend_batch(params, catalog, shortlist, eval_users, cfg.clusters_per_user,
                                cfg.top_n, cfg.exclude_seen),
        cfg.timing_repeats,
    )
    result.param_count = param_count(params)
    result.extras.update(params=params, history=history, shortlist=shortlist,
                         shortlist_time=build_time,
                         candidate_bound=scored_candidates_count(shortlist,
                                                                 cfg.clusters_per_user))
    return recs


def benchmark(dataset: RatingsDataset, catalog: ItemCatalog,
              config: BenchmarkConfig = BenchmarkConfig()) -> EvalReport:
    """Train every method on warmup+mask, evaluate precision@k on target.

    Inference only ever sees the training part of a user's history; target
    interactions are read solely when scoring. A method that raises is
    recorded with its error and the run continues.
    """
    splits, _ = split_dataset(dataset, config.warmup_frac, config.mask_frac,
                              config.split_mode, config.seed)
    train_ds, train_splits, targets = holdout(dataset, splits)
    if catalog.category_columns():
        train_ds = assign_group_labels(train_ds, catalog)
    order = sorted(targets)
    eval_users = [train_ds.users[i] for i in order]
    eval_targets: list[UserRecord] = [targets[i] for i in order]
    keys = [u.user_key for u in eval_users]

    results = []
    for method in config.methods:
        result = MethodResult(method)
        try:
            if method in ("er_interaction", "er_group"):
                strategy = "interaction_split" if method == "er_interaction" else "group_split"
                recs = _run_er(result, strategy, train_ds, train_splits, eval_users, catalog,
                               config)
            elif method == "als":
                factors, result.train_time = _timed(
                    lambda: als_train(train_ds, config.als_factors, config.als_reg,
                                      config.als_sweeps, config.seed)
                )
                recs, result.inference_time = _timed(
                    lambda: [als_recommend(factors, i, config.top_n, config.exclude_seen)
                             for i in order],
                    config.timing_repeats,
                )
                result.param_count = factors.n_params
                result.extras["factors"] = factors
            elif method == "popularity":
                counts, result.train_time = _timed(lambda: liked_counts(train_ds))
                recs, result.inference_time = _timed(
                    lambda: [popularity_recommend(train_ds, config.top_n, config.exclude_seen,
                                                  u, counts) for u in eval_users],
                    config.timing_repeats,
                )
                result.param_count = int(counts.size)
            else:
                raise ValueError(f"unknown method {method!r}")
            _score(result, keys, recs, eval_targets, config.precision_k)
        except Exception as exc:  # recorded per method; the run continues
            log.exception("method %s failed", method)
            result.error = f"{type(exc).__name__}: {exc}"
        results.append(result)
        log.info("%s: precision@%d=%.4f", method, config.precision_k, result.precision)
    return EvalReport(results, config)
