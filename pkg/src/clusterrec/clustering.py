"""Soft cluster assignment and per-cluster shortlist construction.

Every training user votes for the items they liked (rating > 0) in each of
their top-k clusters, weighted by their confidence in that cluster. The
shortlist score of an item in a cluster is the confidence-weighted mean of
those ratings.

Building is a map-reduce: :func:`build_shortlist_partition` maps a slice of
users to additive accumulators, :func:`merge_partials` sums them and
:func:`finalize_shortlist` divides. Any partitioning yields the same
shortlist up to float reassociation.
"""

from __future__ import annotations

import json
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from clusterrec.dataset import ItemCatalog, UserRecord
from clusterrec.errors import ArtifactMismatch, DataError
from clusterrec.model import ModelParams, preference_vectors

SHORTLIST_MAGIC = b"CRSHORT\x00"
SHORTLIST_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ClusterAssignment:
    cluster_ids: np.ndarray
    confidences: np.ndarray


def assign_clusters(z, k: int) -> ClusterAssignment:
    """The ``k`` largest entries of ``z``, ties going to the lower index."""
    z = np.asarray(z, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > z.size:
        warnings.warn(f"k={k} exceeds {z.size} clusters; using {z.size}", stacklevel=2)
        k = z.size
    ids = np.argsort(-z, kind="stable")[:k]
    return ClusterAssignment(ids, z[ids])


def top_clusters(z: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`assign_clusters` for a matrix of preference vectors."""
    k = min(k, z.shape[1])
    ids = np.argsort(-z, axis=1, kind="stable")[:, :k]
    return ids, np.take_along_axis(z, ids, axis=1)


@dataclass(frozen=True)
class PartialShortlist:
    """Additive accumulators keyed by ``cluster * n_items + item``.

    ``keys`` is sorted and unique. Metadata left as ``None`` (only in the
    empty identity element) is compatible with anything.
    """

    keys: np.ndarray
    rating_acc: np.ndarray
    count_acc: np.ndarray
    n_clusters: int | None = None
    n_items: int | None = None
    k: int | None = None
    model_hash: str | None = None

    @classmethod
    def empty(cls, n_clusters=None, n_items=None, k=None, model_hash=None):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0),
                   n_clusters, n_items, k, model_hash)

    def __len__(self) -> int:
        return int(self.keys.size)

    def entries(self) -> dict[tuple[int, int], tuple[float, float]]:
        """``{(cluster, item): (rating_acc, count_acc)}``; handy for tests."""
        c, i = np.divmod(self.keys, self.n_items or 1)
        return {
            (int(a), int(b)): (float(r), float(n))
            for a, b, r, n in zip(c, i, self.rating_acc, self.count_acc)
        }


def _aggregate(keys, rating, count, **meta) -> PartialShortlist:
    uniq, inverse = np.unique(keys, return_inverse=True)
    inverse = inverse.reshape(-1)
    r = np.bincount(inverse, weights=rating, minlength=uniq.size)
    c = np.bincount(inverse, weights=count, minlength=uniq.size)
    return PartialShortlist(uniq.astype(np.int64), r, c, **meta)


def accumulate(z: np.ndarray, users: Sequence[UserRecord], k: int, n_items: int,
               model_hash: str | None = None) -> PartialShortlist:
    """Shortlist accumulators from precomputed preference vectors ``z``."""
    n_clusters = z.shape[1]
    meta = dict(n_clusters=n_clusters, n_items=n_items, k=k, model_hash=model_hash)
    if not users:
        return PartialShortlist.empty(**meta)
    ids, conf = top_clusters(z, k)
    rows, items, ratings = [], [], []
    for row, u in enumerate(users):
        liked = u.ratings > 0
        if liked.any():
            items.append(u.items[liked])
            ratings.append(u.ratings[liked])
            rows.append(np.full(int(liked.sum()), row))
    if not rows:
        return PartialShortlist.empty(**meta)
    rows, items, ratings = np.concatenate(rows), np.concatenate(items), np.concatenate(ratings)
    cl = ids[rows]
    conf = conf[rows]
    keys = (cl * n_items + items[:, None]).reshape(-1)
    return _aggregate(keys, (ratings[:, None] * conf).reshape(-1), conf.reshape(-1), **meta)


def build_shortlist_partition(params: ModelParams, catalog: ItemCatalog,
                              users: Sequence[UserRecord], k: int) -> PartialShortlist:
    """Map step: accumulate one slice of users against a frozen model.

    Preference vectors come from each user's full history.
    """
    z = preference_vectors(params, catalog, list(users))
    return accumulate(z, users, k, params.n_items, params.fingerprint())


def _check_compatible(parts: Sequence[PartialShortlist]) -> dict:
    meta = {}
    for field in ("n_clusters", "n_items", "k", "model_hash"):
        values = {getattr(p, field) for p in parts} - {None}
        if len(values) > 1:
            raise ArtifactMismatch(f"cannot merge partial shortlists with different {field}: "
                                   f"{sorted(map(str, values))}")
        meta[field] = values.pop() if values else None
    return meta


def merge_partials(parts: Sequence[PartialShortlist]) -> PartialShortlist:
    """Reduce step: entrywise sum, folding left to right."""
    parts = list(parts)
    meta = _check_compatible(parts)
    nonempty = [p for p in parts if len(p)]
    if not nonempty:
        return PartialShortlist.empty(**meta)
    if len(nonempty) == 1:
        return PartialShortlist(nonempty[0].keys, nonempty[0].rating_acc,
                                nonempty[0].count_acc, **meta)
    return _aggregate(
        np.concatenate([p.keys for p in nonempty]),
        np.concatenate([p.rating_acc for p in nonempty]),
        np.concatenate([p.count_acc for p in nonempty]),
        **meta,
    )


@dataclass(frozen=True)
class Shortlist:
    """Per-cluster item lists sorted by descending score, then item index."""

    items: tuple[np.ndarray, ...]
    scores: tuple[np.ndarray, ...]
    counts: tuple[np.ndarray, ...]
    n_items: int
    k: int | None
    model_hash: str | None
    prune_top: int | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.items)

    def sizes(self) -> np.ndarray:
        return np.array([a.size for a in self.items], dtype=np.int64)

    def cluster(self, c: int) -> dict[int, float]:
        return dict(zip(self.items[c].tolist(), self.scores[c].tolist()))

    def header(self) -> dict:
        return {
            "n_clusters": self.n_clusters,
            "n_items": self.n_items,
            "k": self.k,
            "model_hash": self.model_hash,
            "prune_top": self.prune_top,
        }


def finalize_shortlist(partial: PartialShortlist, prune_top: int | None = None,
                       n_clusters: int | None = None) -> Shortlist:
    """Divide accumulators into scores, optionally keeping the best ``prune_top``."""
    n_clusters = partial.n_clusters if partial.n_clusters is not None else n_clusters
    if n_clusters is None:
        raise ValueError("number of clusters unknown for an empty partial")
    n_items = partial.n_items or 0
    keep = partial.count_acc > 0
    keys = partial.keys[keep]
    scores = partial.rating_acc[keep] / partial.count_acc[keep]
    counts = partial.count_acc[keep]
    cl, it = (np.divmod(keys, n_items) if n_items else (keys, keys))
    order = np.lexsort((it, -scores, cl))
    cl, it, scores, counts = cl[order], it[order], scores[order], counts[order]
    bounds = np.searchsorted(cl, np.arange(n_clusters + 1))
    items, sc, cn = [], [], []
    for c in range(n_clusters):
        lo, hi = bounds[c], bounds[c + 1]
        if prune_top is not None:
            hi = min(hi, lo + prune_top)
        items.append(it[lo:hi].copy())
        sc.append(scores[lo:hi].copy())
        cn.append(counts[lo:hi].copy())
    return Shortlist(tuple(items), tuple(sc), tuple(cn), n_items, partial.k,
                     partial.model_hash, prune_top)


def partition_ranges(n: int, parts: int) -> list[range]:
    """Split ``range(n)`` into ``parts`` contiguous, nearly equal ranges."""
    parts = max(1, min(parts, n)) if n else 1
    bounds = np.linspace(0, n, parts + 1).round().astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def build_shortlist(params: ModelParams, catalog: ItemCatalog, users: Sequence[UserRecord],
                    k: int, prune_top: int | None = None, n_parts: int = 1,
                    workers: int = 1) -> Shortlist:
    """Build the shortlist over ``users`` split into ``n_parts`` contiguous slices.

    Slices are mapped on up to ``workers`` threads; partials are always
    merged in slice order, so the result depends on ``n_parts`` only.
    """
    users = list(users)
    ranges = partition_ranges(len(users), n_parts)
    job = lambda r: build_shortlist_partition(params, catalog, users[r.start:r.stop], k)
    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(job, ranges))
    else:
        partials = [job(r) for r in ranges]
    merged = merge_partials(partials)
    return finalize_shortlist(merged, prune_top, n_clusters=params.n_clusters)


def _flatten(sl: Shortlist):
    sizes = sl.sizes()
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    cat = lambda arrs, dt: (np.concatenate(arrs).astype(dt) if arrs else np.zeros(0, dt))
    return offsets, cat(sl.items, np.int64), cat(sl.scores, np.float64), cat(sl.counts, np.float64)


def _unflatten(header, offsets, items, scores, counts) -> Shortlist:
    sl = lambda a: tuple(a[offsets[c]:offsets[c + 1]].copy() for c in range(len(offsets) - 1))
    return Shortlist(sl(items), sl(scores), sl(counts), header["n_items"], header["k"],
                     header["model_hash"], header["prune_top"])


def _file_header(sl: Shortlist, meta: dict | None) -> dict:
    return {"format": "clusterrec-shortlist", "format_version": SHORTLIST_FORMAT_VERSION,
            **sl.header(), "meta": meta or {}}


def write_shortlist_csv(path, sl: Shortlist, meta: dict | None = None) -> None:
    """Text form: a ``#``-prefixed JSON header line, then one record per entry."""
    header = json.dumps(_file_header(sl, meta), sort_keys=True, separators=(",", ":"))
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        fh.write("cluster,item,score,count_acc\n")
        for c in range(sl.n_clusters):
            for i, s, n in zip(sl.items[c].tolist(), sl.scores[c].tolist(), sl.counts[c].tolist()):
                fh.write(f"{c},{i},{s!r},{n!r}\n")


def read_shortlist_csv(path) -> tuple[Shortlist, dict]:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise DataError(f"{path}: missing shortlist header")
        header = json.loads(first[2:])
        _check_format(header, path)
        if fh.readline().strip() != "cluster,item,score,count_acc":
            raise DataError(f"{path}: unexpected column header")
        rows = [line.split(",") for line in fh if line.strip()]
    b = header["n_clusters"]
    cl = np.array([int(r[0]) for r in rows], dtype=np.int64)
    items = np.array([int(r[1]) for r in rows], dtype=np.int64)
    scores = np.array([float(r[2]) for r in rows], dtype=np.float64)
    counts = np.array([float(r[3]) for r in rows], dtype=np.float64)
    if cl.size and (np.diff(cl) < 0).any():
        raise DataError(f"{path}: records are not grouped by cluster")
    offsets = np.searchsorted(cl, np.arange(b + 1))
    return _unflatten(header, offsets, items, scores, counts), header


def write_shortlist_bin(path, sl: Shortlist, meta: dict | None = None) -> None:
    """Binary twin: magic, uint32 header length, JSON header, then
    little-endian int64 offsets and items, float64 scores and counts."""
    blob = json.dumps(_file_header(sl, meta), sort_keys=True, separators=(",", ":")).encode()
    offsets, items, scores, counts = _flatten(sl)
    with open(path, "wb") as fh:
        fh.write(SHORTLIST_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a, dt in ((offsets, "<i8"), (items, "<i8"), (scores, "<f8"), (counts, "<f8")):
            fh.write(a.astype(dt).tobytes())


def read_shortlist_bin(path) -> tuple[Shortlist, dict]:
    data = Path(path).read_bytes()
    if data[:len(SHORTLIST_MAGIC)] != SHORTLIST_MAGIC:
        raise DataError(f"{path}: not a binary shortlist")
    pos = len(SHORTLIST_MAGIC)
    (size,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos:pos + size].decode())
    _check_format(header, path)
    pos += size
    b = header["n_clusters"]
    offsets = np.frombuffer(data, "<i8", b + 1, pos).astype(np.int64)
    pos += 8 * (b + 1)
    n = int(offsets[-1])
    out = []
    for dt, native in (("<i8", np.int64), ("<f8", np.float64), ("<f8", np.float64)):
        out.append(np.frombuffer(data, dt, n, pos).astype(native))
        pos += 8 * n
    items, scores, counts = out
    return _unflatten(header, offsets, items, scores, counts), header


def read_shortlist(path) -> tuple[Shortlist, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(SHORTLIST_MAGIC))
    if magic == SHORTLIST_MAGIC:
        return read_shortlist_bin(path)
    return read_shortlist_csv(path)


def _check_format(header: dict, path) -> None:
    if header.get("format") != "clusterrec-shortlist":
        raise DataError(f"{path}: not a shortlist file")
    if header.get("format_version") != SHORTLIST_FORMAT_VERSION:
        raise ArtifactMismatch(f"{path}: unsupported shortlist format "
                               f"{header.get('format_version')}")
