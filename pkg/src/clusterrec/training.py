"""Triplet contrastive training of the preference network.

Two ways of choosing triplets are supported:

``interaction_split``
    anchor and positive are two disjoint parts (warmup / mask) of the same
    user's history; the negative is the warmup part of a user whose group
    label differs.
``group_split``
    anchor and positive are two different users with the same group label,
    the negative a user with another label; full histories are used.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from clusterrec.dataset import RatingsDataset, TripletSplit, split_dataset
from clusterrec.errors import NumericalError, SamplingError, ValidationError
from clusterrec.model import (
    ModelConfig,
    ModelParams,
    ParamGradients,
    backward,
    forward_batch,
    init_params,
)

log = logging.getLogger(__name__)

STRATEGIES = ("interaction_split", "group_split")


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.2
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 256
    strategy: str = "interaction_split"
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # None: one triplet per eligible anchor user per epoch
    triplets_per_epoch: int | None = None
    # split of the training history into anchor/positive parts when no
    # precomputed splits are passed to train()
    warmup_frac: float = 0.5
    mask_frac: float = 0.5
    split_mode: str = "random"

    def __post_init__(self):
        if not self.margin > 0:
            raise ValidationError("margin must be > 0")
        if not self.lr >= 0:
            raise ValidationError("learning rate must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")


class TripletSpec(NamedTuple):
    """Which user and which part of their history makes up each leg.

    Parts are ``"warmup"``, ``"mask"`` or ``"all"``.
    """

    anchor: int
    anchor_part: str
    positive: int
    positive_part: str
    negative: int
    negative_part: str


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    active_frac: float


def _check_lengths(*vecs):
    sizes = {np.shape(v)[-1] for v in vecs}
    if len(sizes) != 1:
        raise ValidationError(f"preference vectors differ in length: {sorted(sizes)}")


def triplet_loss_batch(anchor, positive, negative, margin: float):
    """Hinge triplet loss per row and its subgradients.

    Distances are Euclidean divided by the vector length. Returns
    ``(loss, d_anchor, d_positive, d_negative)``; gradients are zero where
    the hinge is not strictly active and for zero-length difference vectors.
    """
    a, p, n = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (anchor, positive, negative))
    _check_lengths(a, p, n)
    length = a.shape[1]
    dp_vec, dn_vec = a - p, a - n
    dp = np.linalg.norm(dp_vec, axis=1)
    dn = np.linalg.norm(dn_vec, axis=1)
    inner = margin + (dp - dn) / length
    loss = np.maximum(inner, 0.0)
    active = (inner > 0)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        up = np.where(dp[:, None] > 0, dp_vec / (length * dp[:, None]), 0.0)
        un = np.where(dn[:, None] > 0, dn_vec / (length * dn[:, None]), 0.0)
    ga = np.where(active, up - un, 0.0)
    gp = np.where(active, -up, 0.0)
    gn = np.where(active, un, 0.0)
    return loss, ga, gp, gn


def triplet_loss(anchor, positive, negative, margin: float) -> float:
    loss, *_ = triplet_loss_batch(anchor, positive, negative, margin)
    return float(loss[0])


def triplet_loss_grad(anchor, positive, negative, margin: float):
    loss, ga, gp, gn = triplet_loss_batch(anchor, positive, negative, margin)
    return float(loss[0]), ga[0], gp[0], gn[0]


def _anchor_stream(rng, candidates: np.ndarray, count: int) -> np.ndarray:
    """``count`` anchors: consecutive shuffles of ``candidates``."""
    reps = -(-count // len(candidates))
    return np.concatenate([rng.permutation(candidates) for _ in range(reps)])[:count]


def _label_pools(dataset: RatingsDataset, eligible) -> dict[str, np.ndarray]:
    pools: dict[str, list[int]] = {}
    for i in eligible:
        label = dataset.users[i].group_label
        if label is not None:
            pools.setdefault(label, []).append(i)
    return {k: np.array(v, dtype=np.int64) for k, v in sorted(pools.items())}


def _complements(pools: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {
        label: np.concatenate([v for k, v in pools.items() if k != label] or
                              [np.zeros(0, dtype=np.int64)])
        for label in pools
    }


def sample_triplets_interaction(dataset: RatingsDataset, splits: dict[int, TripletSplit],
                                count: int, seed) -> list[TripletSpec]:
    """Anchor = user's warmup part, positive = same user's mask part.

    Negatives are the warmup part of a user with a different group label.
    If no user carries a label at all, negatives fall back to any other
    split user, and a warning is logged.
    """
    rng = np.random.default_rng(seed)
    eligible = np.array(sorted(splits), dtype=np.int64)
    if eligible.size == 0:
        raise SamplingError("no user has a warmup/mask split")
    pools = _label_pools(dataset, eligible)
    if not pools:
        if eligible.size < 2:
            raise SamplingError("need at least two split users for negatives")
        log.warning("no group labels: sampling negatives uniformly among other users")
        anchors = _anchor_stream(rng, eligible, count)
        out = []
        for a in anchors:
            neg = a
            while neg == a:
                neg = int(eligible[rng.integers(eligible.size)])
            out.append(TripletSpec(int(a), "warmup", int(a), "mask", neg, "warmup"))
        return out
    comp = _complements(pools)
    candidates = np.array(
        [i for label, users in pools.items() if comp[label].size for i in users], dtype=np.int64
    )
    if candidates.size == 0:
        sizes = {k: len(v) for k, v in pools.items()}
        raise SamplingError(f"no user with a different group label available; groups {sizes}")
    candidates.sort()
    anchors = _anchor_stream(rng, candidates, count)
    out = []
    for a in anchors:
        others = comp[dataset.users[a].group_label]
        neg = int(others[rng.integers(others.size)])
        out.append(TripletSpec(int(a), "warmup", int(a), "mask", neg, "warmup"))
    return out


def sample_triplets_group(dataset: RatingsDataset, count: int, seed,
                          users: Sequence[int] | None = None) -> list[TripletSpec]:
    """Anchor and positive share a group label, the negative does not."""
    rng = np.random.default_rng(seed)
    eligible = range(len(dataset)) if users is None else users
    pools = _label_pools(dataset, [i for i in eligible if dataset.users[i].q > 0])
    if len(pools) < 2:
        raise SamplingError(f"group split needs >= 2 labelled groups, found {len(pools)}")
    if not any(len(v) >= 2 for v in pools.values()):
        raise SamplingError("group split needs a group with >= 2 members")
    comp = _complements(pools)
    candidates = np.sort(np.concatenate([v for v in pools.values() if len(v) >= 2]))
    anchors = _anchor_stream(rng, candidates, count)
    out = []
    for a in anchors:
        label = dataset.users[a].group_label
        group = pools[label]
        # draw from the group minus the anchor
        j = int(rng.integers(group.size - 1))
        pos = int(group[j] if group[j] != a else group[-1])
        others = comp[label]
        neg = int(others[rng.integers(others.size)])
        out.append(TripletSpec(int(a), "all", pos, "all", neg, "all"))
    return out


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ModelParams, grads: ParamGradients) -> None:
        for w, g in zip(params.weights, grads.weights):
            w -= self.lr * g
        for b, g in zip(params.biases, grads.biases):
            b -= self.lr * g
        params.embed[grads.embed_rows] -= self.lr * grads.embed_grad
        params.bump()


class Adam:
    """Adam with lazy updates for the embedding table.

    Only embedding rows present in the gradient have their moments and
    values updated, so untouched items keep their vectors exactly.
    """

    def __init__(self, params: ModelParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in params.weights + params.biases]
        self.v = [np.zeros_like(a) for a in params.weights + params.biases]
        self.me = np.zeros_like(params.embed)
        self.ve = np.zeros_like(params.embed)

    def _update(self, value, grad, m, v, c1, c2):
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def step(self, params: ModelParams, grads: ParamGradients) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        dense = params.weights + params.biases
        for value, grad, m, v in zip(dense, grads.weights + grads.biases, self.m, self.v):
            self._update(value, grad, m, v, c1, c2)
        rows = grads.embed_rows
        if rows.size:
            value, m, v = params.embed[rows], self.me[rows], self.ve[rows]
            self._update(value, grads.embed_grad, m, v, c1, c2)
            params.embed[rows], self.me[rows], self.ve[rows] = value, m, v
        params.bump()


def _leg_history(dataset, splits, user: int, part: str):
    u = dataset.users[user]
    if part == "all":
        return u.items, u.ratings
    idx = splits[user].part(part)
    return u.items[idx], u.ratings[idx]


def triplet_batch_step(params, catalog, dataset, splits, specs: Sequence[TripletSpec],
                       margin: float):
    """Forward all three legs of ``specs`` in one batch.

    Returns ``(losses, grads)`` with gradients summed over the batch.
    """
    legs = (
        [(s.anchor, s.anchor_part) for s in specs]
        + [(s.positive, s.positive_part) for s in specs]
        + [(s.negative, s.negative_part) for s in specs]
    )
    histories = [_leg_history(dataset, splits, u, part) for u, part in legs]
    demo = np.stack([dataset.users[u].demographics for u, _ in legs])
    z, trace = forward_batch(params, catalog, histories, demo)
    n = len(specs)
    losses, ga, gp, gn = triplet_loss_batch(z[:n], z[n:2 * n], z[2 * n:], margin)
    grads = backward(params, trace, np.concatenate([ga, gp, gn]))
    return losses, grads


def train(dataset: RatingsDataset, catalog, config: TrainConfig = TrainConfig(),
          model_config: ModelConfig = ModelConfig(), params: ModelParams | None = None,
          splits: dict[int, TripletSplit] | None = None):
    """Train (or continue training) the preference network.

    Returns ``(params, history)`` where ``history`` holds one
    :class:`EpochStats` per epoch; the mean loss includes zero-loss
    triplets. A non-finite loss aborts with :class:`NumericalError`.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    if params is None:
        params = init_params(catalog.n_items, catalog.n_features, dataset.demo_dim, model_config)
    if config.strategy == "interaction_split":
        if splits is None:
            splits, _ = split_dataset(dataset, config.warmup_frac, config.mask_frac,
                                      config.split_mode, config.seed)
        sampler = lambda count, seed: sample_triplets_interaction(dataset, splits, count, seed)
        n_anchor = len(splits)
    else:
        splits = splits or {}
        sampler = lambda count, seed: sample_triplets_group(dataset, count, seed)
        n_anchor = sum(1 for u in dataset.users if u.group_label is not None and u.q > 0)
    per_epoch = config.triplets_per_epoch or n_anchor
    if config.optimizer == "adam":
        opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    else:
        opt = Sgd(config.lr)

    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        specs = sampler(per_epoch, [config.seed, epoch])
        total, active = 0.0, 0
        for start in range(0, len(specs), config.batch_size):
            batch = specs[start:start + config.batch_size]
            losses, grads = triplet_batch_step(params, catalog, dataset, splits, batch,
                                               config.margin)
            batch_total = float(losses.sum())
            if not math.isfinite(batch_total):
                raise NumericalError(
                    f"non-finite loss in epoch {epoch + 1}; try a smaller learning rate "
                    f"(current {config.lr})"
                )
            total += batch_total
            active += int((losses > 0).sum())
            opt.step(params, grads)
        stats = EpochStats(epoch + 1, total / len(specs), active / len(specs))
        history.append(stats)
        log.info("epoch %d: mean loss %.6f, active %.3f", stats.epoch, stats.mean_loss,
                 stats.active_frac)
    return params, history


def write_loss_csv(path, history: Sequence[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "active_triplet_frac"])
        for s in history:
            w.writerow([s.epoch, repr(s.mean_loss), repr(s.active_frac)])


def pair_distances(z: np.ndarray, labels: Sequence, n_pairs: int, seed=0):
    """Mean Euclidean distance over same-label and different-label pairs.

    Samples ``n_pairs`` of each kind among rows with a non-``None`` label.
    Returns ``(mean_positive, mean_negative)``.
    """
    rng = np.random.default_rng(seed)
    idx = np.array([i for i, lab in enumerate(labels) if lab is not None])
    lab = np.array([labels[i] for i in idx], dtype=object)
    groups = {g: int((lab == g).sum()) for g in set(lab)}
    if len(groups) < 2 or max(groups.values()) < 2:
        raise SamplingError(f"cannot form both pair kinds from groups {groups}")
    pos, neg = [], []
    # rejection sampling; groups are few so acceptance rates are high
    while len(pos) < n_pairs or len(neg) < n_pairs:
        a, b = rng.integers(idx.size, size=2)
        if a == b:
            continue
        d = float(np.linalg.norm(z[idx[a]] - z[idx[b]]))
        if lab[a] == lab[b]:
            if len(pos) < n_pairs:
                pos.append(d)
        elif len(neg) < n_pairs:
            neg.append(d)
    return float(np.mean(pos)), float(np.mean(neg))
