"""Serve recommendations by letting a user's top clusters vote over shortlists."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from clusterrec.clustering import Shortlist, assign_clusters, top_clusters
from clusterrec.dataset import ItemCatalog, UserRecord
from clusterrec.errors import ArtifactMismatch
from clusterrec.model import ModelParams, forward, preference_vectors


@dataclass(frozen=True)
class Recommendation:
    items: np.ndarray
    scores: np.ndarray
    cluster_ids: np.ndarray
    confidences: np.ndarray
    # distinct candidate items whose vote score was computed
    n_scored: int = 0

    def __len__(self) -> int:
        return int(self.items.size)

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.items.tolist(), self.scores.tolist()))


def check_compatible(params: ModelParams, shortlist: Shortlist) -> None:
    if shortlist.model_hash is not None and shortlist.model_hash != params.fingerprint():
        raise ArtifactMismatch(
            f"shortlist built for model {shortlist.model_hash}, "
            f"current model is {params.fingerprint()}"
        )
    if shortlist.n_clusters != params.n_clusters:
        raise ArtifactMismatch(
            f"shortlist has {shortlist.n_clusters} clusters, model has {params.n_clusters}"
        )


def rank(items: np.ndarray, scores: np.ndarray, top_n: int | None):
    """Sort by descending score, lower item index first on ties."""
    order = np.lexsort((items, -scores))
    if top_n is not None:
        order = order[:top_n]
    return items[order], scores[order]


def vote(shortlist: Shortlist, cluster_ids, confidences, exclude=None, top_n: int | None = 50):
    """Confidence-weighted mean of shortlist scores over the chosen clusters.

    An item is averaged only over the selected clusters that list it.
    Returns ``(items, scores, n_scored)``.
    """
    chosen = [int(c) for c in cluster_ids]
    if not chosen:
        empty = np.zeros(0, dtype=np.int64)
        return empty, np.zeros(0), 0
    items = np.concatenate([shortlist.items[c] for c in chosen])
    conf = np.concatenate([np.full(shortlist.items[c].size, w)
                           for c, w in zip(chosen, confidences)])
    scores = np.concatenate([shortlist.scores[c] for c in chosen])
    uniq, inverse = np.unique(items, return_inverse=True)
    inverse = inverse.reshape(-1)
    rating = np.bincount(inverse, weights=scores * conf, minlength=uniq.size)
    count = np.bincount(inverse, weights=conf, minlength=uniq.size)
    n_scored = int(uniq.size)
    final = rating / count
    if exclude is not None and len(exclude):
        keep = ~np.isin(uniq, exclude)
        uniq, final = uniq[keep], final[keep]
    ranked_items, ranked_scores = rank(uniq, final, top_n)
    return ranked_items, ranked_scores, n_scored


def recommend(params: ModelParams, catalog: ItemCatalog, shortlist: Shortlist, user: UserRecord,
              k: int = 3, top_n: int | None = 50, exclude_seen: bool = True) -> Recommendation:
    """Rank shortlisted items for one user.

    The user's preference vector is computed from their whole history (an
    empty history is fine: demographics alone drive it).
    """
    check_compatible(params, shortlist)
    z, _ = forward(params, catalog, user)
    ca = assign_clusters(z, k)
    items, scores, n_scored = vote(shortlist, ca.cluster_ids, ca.confidences,
                                   user.items if exclude_seen else None, top_n)
    return Recommendation(items, scores, ca.cluster_ids, ca.confidences, n_scored)


def recommend_batch(params: ModelParams, catalog: ItemCatalog, shortlist: Shortlist,
                    users: Sequence[UserRecord], k: int = 3, top_n: int | None = 50,
                    exclude_seen: bool = True) -> list[Recommendation]:
    check_compatible(params, shortlist)
    z = preference_vectors(params, catalog, list(users))
    ids, conf = top_clusters(z, k) if len(users) else (np.zeros((0, 0), int), np.zeros((0, 0)))
    out = []
    for u, cl, w in zip(users, ids, conf):
        items, scores, n_scored = vote(shortlist, cl, w, u.items if exclude_seen else None, top_n)
        out.append(Recommendation(items, scores, cl, w, n_scored))
    return out


def scored_candidates_count(shortlist: Shortlist, k: int) -> int:
    """Upper bound on items scored per request: the ``k`` largest clusters, capped at the catalog."""
    sizes = np.sort(shortlist.sizes())[::-1]
    return int(min(sizes[:k].sum(), shortlist.n_items))


def write_recommendations_csv(fh, rows: Iterable[tuple[str, Recommendation]],
                              item_ids: Sequence[str] | None = None) -> int:
    """Write ``user,rank,item,score`` rows; returns the number of users written."""
    w = csv.writer(fh)
    w.writerow(["user", "rank", "item", "score"])
    n = 0
    for key, rec in rows:
        n += 1
        for r, (item, score) in enumerate(rec.pairs(), start=1):
            w.writerow([key, r, item_ids[item] if item_ids is not None else item, repr(score)])
    return n
