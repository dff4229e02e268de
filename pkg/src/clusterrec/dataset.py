"""Ratings, item features and demographics ingestion plus per-user splits.

File formats
------------
ratings     ``user,item,rating[,timestamp]``; a header row is detected by a
            non-numeric rating field in the first row.
items       ``item,f1,...,f_dv`` with a mandatory header; columns whose name
            starts with ``genre:`` are one-hot category indicators.
demographics ``user,d1,...,d_dd`` with a mandatory header.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from clusterrec.errors import ParseError, UnsplittableError, ValidationError

log = logging.getLogger(__name__)

GENRE_PREFIX = "genre:"


class RatingScale(NamedTuple):
    min: float
    max: float


class Interaction(NamedTuple):
    item_index: int
    rating: float
    timestamp: float = 0.0


def normalize_rating(raw: float, scale: RatingScale) -> float:
    """Linearly map ``raw`` from ``[scale.min, scale.max]`` onto ``[-1, 1]``."""
    lo, hi = scale
    if not lo < hi:
        raise ValidationError(f"degenerate rating scale {scale}")
    if not lo <= raw <= hi:
        raise ValidationError(f"rating {raw} outside scale [{lo}, {hi}]")
    return 2.0 * (raw - lo) / (hi - lo) - 1.0


def denormalize_rating(r: float, scale: RatingScale) -> float:
    lo, hi = scale
    return (r + 1.0) * (hi - lo) / 2.0 + lo


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ItemCatalog:
    features: np.ndarray
    item_ids: tuple[str, ...]
    columns: tuple[str, ...] = ()
    id_map: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(self.item_ids):
            raise ValidationError("feature matrix must have one row per item id")
        if not np.isfinite(feats).all():
            raise ValidationError("item features must be finite")
        object.__setattr__(self, "features", _frozen(feats))
        if not self.columns:
            object.__setattr__(
                self, "columns", tuple(f"f{i + 1}" for i in range(feats.shape[1]))
            )
        object.__setattr__(
            self, "id_map", {item: i for i, item in enumerate(self.item_ids)}
        )

    @property
    def n_items(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def category_columns(self, prefix: str = GENRE_PREFIX) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.startswith(prefix)]

    def category_names(self, prefix: str = GENRE_PREFIX) -> list[str]:
        return [c[len(prefix):] for c in self.columns if c.startswith(prefix)]


@dataclass(frozen=True)
class UserRecord:
    """One user's history. ``items``, ``ratings`` and ``timestamps`` are aligned."""

    user_key: str
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    demographics: np.ndarray
    group_label: str | None = None

    def __post_init__(self):
        items = np.asarray(self.items, dtype=np.int64)
        ratings = np.asarray(self.ratings, dtype=np.float64)
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if not (items.shape == ratings.shape == ts.shape) or items.ndim != 1:
            raise ValidationError(f"user {self.user_key}: misaligned interaction arrays")
        if ratings.size and (np.abs(ratings) > 1.0).any():
            raise ValidationError(f"user {self.user_key}: ratings must lie in [-1, 1]")
        object.__setattr__(self, "items", _frozen(items))
        object.__setattr__(self, "ratings", _frozen(ratings))
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(
            self, "demographics", _frozen(np.asarray(self.demographics, dtype=np.float64))
        )

    @classmethod
    def from_interactions(cls, user_key, interactions: Sequence[Interaction], demographics=(),
                          group_label=None) -> "UserRecord":
        rows = list(interactions)
        return cls(
            user_key=user_key,
            items=[r[0] for r in rows],
            ratings=[r[1] for r in rows],
            timestamps=[r[2] if len(r) > 2 else 0.0 for r in rows],
            demographics=demographics,
            group_label=group_label,
        )

    @property
    def q(self) -> int:
        return int(self.items.shape[0])

    @property
    def interactions(self) -> list[Interaction]:
        return [
            Interaction(int(i), float(r), float(t))
            for i, r, t in zip(self.items, self.ratings, self.timestamps)
        ]

    def subset(self, idx) -> "UserRecord":
        """Same user restricted to the interactions at positions ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        return dataclasses.replace(
            self, items=self.items[idx], ratings=self.ratings[idx],
            timestamps=self.timestamps[idx],
        )


@dataclass(frozen=True)
class RatingsDataset:
    users: tuple[UserRecord, ...]
    n_items: int
    demo_dim: int = 0
    skipped_rows: int = 0

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        for u in self.users:
            if u.demographics.shape != (self.demo_dim,):
                raise ValidationError(
                    f"user {u.user_key}: demographics length {u.demographics.shape} "
                    f"!= declared {self.demo_dim}"
                )
            if u.q and (u.items.min() < 0 or u.items.max() >= self.n_items):
                raise ValidationError(f"user {u.user_key}: item index out of range")

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self) -> Iterator[UserRecord]:
        return iter(self.users)

    def __getitem__(self, i) -> UserRecord:
        return self.users[i]

    @property
    def n_interactions(self) -> int:
        return sum(u.q for u in self.users)

    def key_index(self) -> dict[str, int]:
        return {u.user_key: i for i, u in enumerate(self.users)}

    def replace_users(self, users) -> "RatingsDataset":
        return dataclasses.replace(self, users=tuple(users))


@dataclass(frozen=True)
class TripletSplit:
    """Positions (into a user's interaction arrays) of each split part."""

    warmup: np.ndarray
    mask: np.ndarray
    target: np.ndarray

    def part(self, name: str) -> np.ndarray:
        return getattr(self, name)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_items(path) -> ItemCatalog:
    path = Path(path)
    ids, rows = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return ItemCatalog(np.zeros((0, 0)), ())
        if len(header) > 1 and all(_is_number(h) for h in header[1:]):
            raise ParseError(path, 1, "item feature file needs a header row")
        width = len(header)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(path, line, f"expected {width} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(path, line, str(exc)) from None
            if not all(math.isfinite(v) for v in vals):
                raise ValidationError(f"{path}:{line}: non-finite feature value")
            ids.append(row[0].strip())
            rows.append(vals)
    feats = np.asarray(rows, dtype=np.float64).reshape(len(rows), width - 1)
    return ItemCatalog(feats, tuple(ids), tuple(h.strip() for h in header[1:]))


def load_ratings(path, catalog: ItemCatalog, scale: RatingScale | None,
                 implicit: bool = False) -> RatingsDataset:
    """Read a ratings CSV, grouping rows by user in order of first appearance.

    With ``implicit=True`` every row counts as a like (+1) and the rating
    column may be omitted. Rows naming an item that is not in ``catalog``
    are skipped and counted in ``skipped_rows``.
    """
    path = Path(path)
    if not implicit and scale is None:
        raise ValidationError("explicit ratings need a rating scale")
    grouped: dict[str, list[tuple[int, float, float]]] = {}
    skipped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) not in ((2, 3, 4) if implicit else (3, 4)):
                raise ParseError(path, line, f"unexpected field count {len(row)}")
            user, item = row[0].strip(), row[1].strip()
            if line == 1 and len(row) > 2 and not _is_number(row[2]):
                continue
            if line == 1 and implicit and len(row) == 2 and user.lower() == "user":
                continue
            try:
                raw = float(row[2]) if len(row) > 2 else 1.0
                ts = float(row[3]) if len(row) > 3 and row[3].strip() else 0.0
            except ValueError as exc:
                raise ParseError(path, line, str(exc)) from None
            if implicit:
                r = 1.0
            else:
                try:
                    r = normalize_rating(raw, scale)
                except ValidationError as exc:
                    raise ValidationError(f"{path}:{line}: {exc}") from None
            idx = catalog.id_map.get(item)
            if idx is None:
                skipped += 1
                continue
            grouped.setdefault(user, []).append((idx, r, ts))
    if skipped:
        log.warning("%s: skipped %d rows with unknown item ids", path, skipped)
    users = [UserRecord.from_interactions(k, v) for k, v in grouped.items()]
    return RatingsDataset(tuple(users), catalog.n_items, 0, skipped)


def load_demographics(path) -> tuple[dict[str, np.ndarray], int]:
    path = Path(path)
    out: dict[str, np.ndarray] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out, 0
        dim = len(header) - 1
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise ParseError(path, line, f"expected {dim + 1} fields, got {len(row)}")
            try:
                vec = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(path, line, str(exc)) from None
            if not np.isfinite(vec).all():
                raise ValidationError(f"{path}:{line}: non-finite demographic value")
            out[row[0].strip()] = vec
    return out, dim


def attach_demographics(dataset: RatingsDataset, demographics: dict[str, np.ndarray],
                        dim: int) -> RatingsDataset:
    """Give every user their demographic vector; users not listed get zeros."""
    zero = np.zeros(dim)
    users = [
        dataclasses.replace(u, demographics=demographics.get(u.user_key, zero))
        for u in dataset.users
    ]
    return dataclasses.replace(dataset, users=tuple(users), demo_dim=dim)


def _part_sizes(q: int, warmup_frac: float, mask_frac: float) -> tuple[int, int]:
    # the epsilon keeps ceil(0.3 * 10) at 3 despite 3.0000000000000004
    nw = math.ceil(warmup_frac * q - 1e-9)
    nm = math.ceil(mask_frac * q - 1e-9)
    nw = min(max(nw, 1), q - 1)
    nm = min(max(nm, 1), q - nw)
    return nw, nm


def interaction_split(user: UserRecord, warmup_frac: float = 0.5, mask_frac: float = 0.25,
                      mode: str = "random", rng_seed=0) -> TripletSplit:
    """Partition a user's interactions into warmup, mask and target parts.

    Part sizes are ``ceil(warmup_frac * q)`` then ``ceil(mask_frac * q)``,
    the remainder going to target. ``sequential`` mode orders by timestamp
    (stable, so equal timestamps keep file order); ``random`` mode shuffles
    with a generator seeded by ``rng_seed``.
    """
    if warmup_frac <= 0 or mask_frac <= 0 or warmup_frac + mask_frac > 1 + 1e-12:
        raise ValidationError(f"bad split fractions ({warmup_frac}, {mask_frac})")
    q = user.q
    if q < 3:
        raise UnsplittableError(f"user {user.user_key} has {q} interactions, need >= 3")
    nw, nm = _part_sizes(q, warmup_frac, mask_frac)
    if mode == "sequential":
        order = np.argsort(user.timestamps, kind="stable")
        parts = order[:nw], order[nw:nw + nm], order[nw + nm:]
    elif mode == "random":
        order = np.random.default_rng(rng_seed).permutation(q)
        parts = tuple(np.sort(p) for p in (order[:nw], order[nw:nw + nm], order[nw + nm:]))
    else:
        raise ValidationError(f"unknown split mode {mode!r}")
    return TripletSplit(*(_frozen(np.asarray(p, dtype=np.int64)) for p in parts))


def split_dataset(dataset: RatingsDataset, warmup_frac: float = 0.5, mask_frac: float = 0.25,
                  mode: str = "random", seed: int = 0):
    """Split every user; returns ``(splits, unsplittable)``.

    ``splits`` maps user position to its :class:`TripletSplit`; users with
    fewer than three interactions are listed in ``unsplittable`` instead.
    """
    splits: dict[int, TripletSplit] = {}
    unsplittable: list[int] = []
    for i, user in enumerate(dataset.users):
        try:
            splits[i] = interaction_split(user, warmup_frac, mask_frac, mode, (seed, i))
        except UnsplittableError:
            unsplittable.append(i)
    if unsplittable:
        log.info("%d users too short to split, excluded", len(unsplittable))
    return splits, unsplittable


def holdout(dataset: RatingsDataset, splits: dict[int, TripletSplit]):
    """Separate the target parts from the training history.

    Returns ``(train, train_splits, targets)``. ``train`` keeps every user
    in the same position, with split users' histories reordered to
    warmup followed by mask; ``train_splits`` indexes those reordered
    histories and ``targets`` maps user position to the held-out
    :class:`UserRecord`.
    """
    users, train_splits, targets = [], {}, {}
    for i, user in enumerate(dataset.users):
        sp = splits.get(i)
        if sp is None:
            users.append(user)
            continue
        nw, nm = len(sp.warmup), len(sp.mask)
        users.append(user.subset(np.concatenate([sp.warmup, sp.mask])))
        train_splits[i] = TripletSplit(
            _frozen(np.arange(nw)), _frozen(np.arange(nw, nw + nm)),
            _frozen(np.arange(0, dtype=np.int64)),
        )
        targets[i] = user.subset(sp.target)
    return dataset.replace_users(users), train_splits, targets


def assign_group_labels(dataset: RatingsDataset, catalog: ItemCatalog,
                        category_prefix: str = GENRE_PREFIX) -> RatingsDataset:
    """Label each user with the category they like most.

    The score of a category is the sum of positive ratings over the user's
    interactions tagged with it; the lowest category index wins ties. Users
    without any liked, categorised interaction get ``None``.
    """
    cols = catalog.category_columns(category_prefix)
    names = catalog.category_names(category_prefix)
    if not cols:
        raise ValidationError(f"catalog has no {category_prefix!r} columns")
    cats = catalog.features[:, cols]
    users = []
    for u in dataset.users:
        liked = u.ratings > 0
        label = None
        if liked.any():
            totals = u.ratings[liked] @ cats[u.items[liked]]
            if totals.max() > 0:
                label = names[int(np.argmax(totals))]
        users.append(dataclasses.replace(u, group_label=label))
    return dataset.replace_users(users)
