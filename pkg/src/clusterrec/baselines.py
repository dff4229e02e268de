"""Reference recommenders: explicit-rating ALS and liked-item popularity."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from clusterrec.dataset import RatingsDataset, UserRecord
from clusterrec.errors import ValidationError
from clusterrec.recommender import Recommendation, rank

log = logging.getLogger(__name__)

_NO_CLUSTERS = np.zeros(0, dtype=np.int64)


@dataclass
class AlsFactors:
    user_factors: np.ndarray
    item_factors: np.ndarray
    reg: float
    # per-sweep values; index 0 is the initialization
    objective: list[float] = field(default_factory=list)
    sse: list[float] = field(default_factory=list)
    seen: tuple[np.ndarray, ...] = ()

    @property
    def n_params(self) -> int:
        return int(self.user_factors.size + self.item_factors.size)


def _by_item(dataset: RatingsDataset):
    users = np.concatenate([np.full(u.q, i) for i, u in enumerate(dataset.users)])
    items = np.concatenate([u.items for u in dataset.users])
    ratings = np.concatenate([u.ratings for u in dataset.users])
    order = np.argsort(items, kind="stable")
    bounds = np.searchsorted(items[order], np.arange(dataset.n_items + 1))
    return users[order], ratings[order], bounds


def _solve_side(other: np.ndarray, index_lists, rating_lists, reg: float) -> np.ndarray:
    df = other.shape[1]
    eye = reg * np.eye(df)
    out = np.zeros((len(index_lists), df))
    for row, (idx, r) in enumerate(zip(index_lists, rating_lists)):
        if idx.size == 0:
            continue
        f = other[idx]
        out[row] = np.linalg.solve(f.T @ f + eye, f.T @ r)
    return out


def als_objective(dataset: RatingsDataset, user_factors, item_factors, reg: float):
    """Returns ``(regularized objective, squared error over observed ratings)``."""
    sse = 0.0
    for i, u in enumerate(dataset.users):
        if u.q:
            err = u.ratings - item_factors[u.items] @ user_factors[i]
            sse += float(err @ err)
    penalty = reg * (float((user_factors ** 2).sum()) + float((item_factors ** 2).sum()))
    return sse + penalty, sse


def als_train(dataset: RatingsDataset, df: int = 32, reg: float = 0.1, sweeps: int = 15,
              seed: int = 0) -> AlsFactors:
    """Alternating ridge regressions on the observed (normalized) ratings.

    Each sweep solves every user's factors with item factors fixed, then
    every item's with user factors fixed; the regularized objective never
    increases.
    """
    if len(dataset) == 0:
        raise ValidationError("ALS needs a nonempty dataset")
    if df < 1 or not reg > 0:
        raise ValidationError("ALS needs df >= 1 and reg > 0")
    rng = np.random.default_rng(seed)
    U = rng.normal(0.0, 0.1, size=(len(dataset), df))
    V = rng.normal(0.0, 0.1, size=(dataset.n_items, df))
    user_items = [u.items for u in dataset.users]
    user_ratings = [u.ratings for u in dataset.users]
    iu, ir, bounds = _by_item(dataset)
    item_users = [iu[bounds[j]:bounds[j + 1]] for j in range(dataset.n_items)]
    item_ratings = [ir[bounds[j]:bounds[j + 1]] for j in range(dataset.n_items)]
    obj, sse = als_objective(dataset, U, V, reg)
    factors = AlsFactors(U, V, reg, [obj], [sse], tuple(user_items))
    for sweep in range(sweeps):
        U = _solve_side(V, user_items, user_ratings, reg)
        V = _solve_side(U, item_users, item_ratings, reg)
        obj, sse = als_objective(dataset, U, V, reg)
        factors.objective.append(obj)
        factors.sse.append(sse)
        log.debug("ALS sweep %d: objective %.6f, sse %.6f", sweep + 1, obj, sse)
    factors.user_factors, factors.item_factors = U, V
    return factors


def als_recommend(factors: AlsFactors, user_index: int, top_n: int | None = 50,
                  exclude_seen: bool = True) -> Recommendation:
    """Score the whole catalog for a known user."""
    if not 0 <= user_index < factors.user_factors.shape[0]:
        raise KeyError(f"ALS has no factors for user {user_index}; it cannot cold-start")
    scores = factors.item_factors @ factors.user_factors[user_index]
    items = np.arange(scores.size)
    if exclude_seen and factors.seen:
        keep = ~np.isin(items, factors.seen[user_index])
        items, scores = items[keep], scores[keep]
    ranked, ranked_scores = rank(items, scores, top_n)
    return Recommendation(ranked, ranked_scores, _NO_CLUSTERS, np.zeros(0),
                          factors.item_factors.shape[0])


def liked_counts(dataset: RatingsDataset) -> np.ndarray:
    counts = np.zeros(dataset.n_items, dtype=np.int64)
    for u in dataset.users:
        np.add.at(counts, u.items[u.ratings > 0], 1)
    return counts


def popularity_recommend(dataset: RatingsDataset, top_n: int | None = 50,
                         exclude_seen: bool = True, user: UserRecord | None = None,
                         counts: np.ndarray | None = None) -> Recommendation:
    """Items ranked by how many users liked them (lower index on ties).

    Pass precomputed ``counts`` from :func:`liked_counts` to avoid
    recounting for every user.
    """
    if counts is None:
        counts = liked_counts(dataset)
    items = np.flatnonzero(counts > 0)
    if exclude_seen and user is not None:
        items = items[~np.isin(items, user.items)]
    ranked, scores = rank(items, counts[items].astype(np.float64), top_n)
    return Recommendation(ranked, scores, _NO_CLUSTERS, np.zeros(0), int(counts.size))
