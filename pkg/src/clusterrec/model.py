"""Interaction-embedding network mapping a user history to a preference vector.

Each item is represented by its catalog features concatenated with a
learned id embedding. A user is the rating-weighted mean of those item
vectors over their history (divided by the history length ``q``),
concatenated with demographics, and passed through a ReLU MLP with a
sigmoid output of width ``n_clusters``.

There is no per-user state: the parameter count depends only on the
catalog size and layer widths.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit

from clusterrec.dataset import Interaction, ItemCatalog, UserRecord
from clusterrec.errors import ArtifactMismatch, DataError, ValidationError

MODEL_MAGIC = b"CRMODEL\x00"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 32
    hidden: tuple[int, ...] = (128, 64)
    n_clusters: int = 64
    seed: int = 0


@dataclass
class ModelParams:
    """Learned state: the id embedding table and the MLP weights.

    ``weights[l]`` has shape ``(fan_in, fan_out)``. ``version`` is bumped on
    every in-place update so stale traces can be detected.
    """

    embed: np.ndarray
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feat_dim: int
    demo_dim: int
    version: int = 0
    _fingerprint: tuple[int, str] | None = field(default=None, repr=False, compare=False)

    @property
    def n_items(self) -> int:
        return self.embed.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    @property
    def n_clusters(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [("embed", self.embed)]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"w{i}", w), (f"b{i}", b)]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.embed.copy(), [w.copy() for w in self.weights],
            [b.copy() for b in self.biases], self.feat_dim, self.demo_dim, self.version,
        )

    def bump(self) -> None:
        self.version += 1

    def fingerprint(self) -> str:
        """Hash of the parameters as stored on disk (float32, little endian)."""
        if self._fingerprint is None or self._fingerprint[0] != self.version:
            h = hashlib.sha256()
            h.update(json.dumps(self.dims(), sort_keys=True).encode())
            for _, a in self.arrays():
                h.update(np.ascontiguousarray(a, dtype="<f4").tobytes())
            self._fingerprint = (self.version, h.hexdigest()[:16])
        return self._fingerprint[1]

    def dims(self) -> dict:
        return {
            "n_items": self.n_items,
            "feat_dim": self.feat_dim,
            "embed_dim": self.embed_dim,
            "demo_dim": self.demo_dim,
            "hidden": list(self.hidden),
            "n_clusters": self.n_clusters,
        }


def init_params(n_items: int, feat_dim: int, demo_dim: int,
                config: ModelConfig = ModelConfig()) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    s = 1.0 / np.sqrt(config.embed_dim)
    embed = rng.uniform(-s, s, size=(n_items, config.embed_dim))
    dims = [feat_dim + config.embed_dim + demo_dim, *config.hidden, config.n_clusters]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-s, s, size=fan_out))
    return ModelParams(embed, weights, biases, feat_dim, demo_dim)


def param_count(params: ModelParams) -> int:
    return int(sum(a.size for _, a in params.arrays()))


def item_feature(params: ModelParams, catalog: ItemCatalog, item_index: int) -> np.ndarray:
    if not 0 <= item_index < params.n_items:
        raise IndexError(f"item index {item_index} outside catalog of {params.n_items}")
    return np.concatenate([catalog.features[item_index], params.embed[item_index]])


def _as_arrays(interactions) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(interactions, UserRecord):
        return interactions.items, interactions.ratings
    rows: Sequence[Interaction] = list(interactions)
    return (np.array([r[0] for r in rows], dtype=np.int64),
            np.array([r[1] for r in rows], dtype=np.float64))


def user_embedding(params: ModelParams, catalog: ItemCatalog, interactions) -> np.ndarray:
    """Rating-weighted mean of item vectors; zeros for an empty history."""
    items, ratings = _as_arrays(interactions)
    width = catalog.n_features + params.embed_dim
    if items.size == 0:
        return np.zeros(width)
    f = np.concatenate([catalog.features[items], params.embed[items]], axis=1)
    return ratings @ f / items.size


@dataclass
class ForwardTrace:
    """Activations cached by :func:`forward_batch` for one batch of histories.

    ``items``/``weights``/``rows`` describe the pooling: interaction ``n``
    contributes ``weights[n] * f(items[n])`` to batch row ``rows[n]``.
    """

    items: np.ndarray
    weights: np.ndarray
    rows: np.ndarray
    inputs: np.ndarray
    pre: list[np.ndarray]
    outputs: np.ndarray
    version: int

    @property
    def batch_size(self) -> int:
        return self.outputs.shape[0]


@dataclass
class ParamGradients:
    """Dense MLP gradients plus row-sparse embedding gradients."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    embed_rows: np.ndarray
    embed_grad: np.ndarray

    def dense_embed(self, n_items: int) -> np.ndarray:
        out = np.zeros((n_items, self.embed_grad.shape[1]))
        out[self.embed_rows] = self.embed_grad
        return out


def _pool(params: ModelParams, catalog: ItemCatalog, histories, demographics):
    """Build the pooling operator and the MLP input matrix for a batch."""
    counts = np.array([len(it) for it, _ in histories], dtype=np.int64)
    n = len(histories)
    if counts.sum():
        items = np.concatenate([np.asarray(it, dtype=np.int64) for it, _ in histories])
        ratings = np.concatenate([np.asarray(r, dtype=np.float64) for _, r in histories])
    else:
        items = np.zeros(0, dtype=np.int64)
        ratings = np.zeros(0)
    rows = np.repeat(np.arange(n), counts)
    weights = ratings / np.maximum(counts, 1)[rows]
    if items.size and (items.min() < 0 or items.max() >= params.n_items):
        raise IndexError("interaction item index outside the catalog")
    pool = sparse.csr_matrix((weights, (rows, np.arange(items.size))), shape=(n, items.size))
    feats = np.concatenate([catalog.features[items], params.embed[items]], axis=1)
    x = pool @ feats
    demo = np.asarray(demographics, dtype=np.float64).reshape(n, -1)
    if demo.shape[1] != params.demo_dim:
        raise ValidationError(
            f"demographics have {demo.shape[1]} columns, model expects {params.demo_dim}"
        )
    return items, weights, rows, np.concatenate([x, demo], axis=1)


def forward_batch(params: ModelParams, catalog: ItemCatalog, histories, demographics):
    """Preference vectors for a batch.

    ``histories`` is a sequence of ``(items, ratings)`` pairs and
    ``demographics`` an ``(n, demo_dim)`` array. Returns ``(Z, trace)``.
    """
    if catalog.n_features != params.feat_dim or catalog.n_items != params.n_items:
        raise ArtifactMismatch(
            f"catalog is {catalog.n_items}x{catalog.n_features}, model expects "
            f"{params.n_items}x{params.feat_dim}"
        )
    items, weights, rows, h = _pool(params, catalog, histories, demographics)
    inputs, pre = h, []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w + b
        pre.append(a)
        h = np.maximum(a, 0.0) if i < last else expit(a)
    return h, ForwardTrace(items, weights, rows, inputs, pre, h, params.version)


def user_batch(users: Sequence[UserRecord], subsets=None):
    """``(histories, demographics)`` for :func:`forward_batch`.

    ``subsets`` optionally gives, per user, positions of the interactions
    to use (``None`` entries mean the whole history).
    """
    histories = []
    for i, u in enumerate(users):
        idx = None if subsets is None else subsets[i]
        if idx is None:
            histories.append((u.items, u.ratings))
        else:
            histories.append((u.items[idx], u.ratings[idx]))
    demo = np.stack([u.demographics for u in users]) if users else np.zeros((0, 0))
    return histories, demo


def forward(params: ModelParams, catalog: ItemCatalog, user: UserRecord, subset=None):
    """Preference vector of one user; returns ``(z, trace)``."""
    histories, demo = user_batch([user], [subset])
    z, trace = forward_batch(params, catalog, histories, demo)
    return z[0], trace


def preference_vectors(params: ModelParams, catalog: ItemCatalog, users: Sequence[UserRecord],
                       batch_size: int = 4096) -> np.ndarray:
    """Preference vectors of ``users`` from their full histories."""
    out = np.zeros((len(users), params.n_clusters))
    for start in range(0, len(users), batch_size):
        chunk = users[start:start + batch_size]
        histories, demo = user_batch(chunk)
        out[start:start + len(chunk)], _ = forward_batch(params, catalog, histories, demo)
    return out


def backward(params: ModelParams, traces, loss_grads) -> ParamGradients:
    """Exact gradients of a loss given its gradient w.r.t. each trace's outputs.

    ``traces`` and ``loss_grads`` are parallel sequences (a single trace and
    array are accepted too); contributions are summed in order.
    """
    if isinstance(traces, ForwardTrace):
        traces, loss_grads = [traces], [loss_grads]
    gw = [np.zeros_like(w) for w in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    rows_list, grads_list = [], []
    fd = params.feat_dim
    for trace, dz in zip(traces, loss_grads):
        if trace.version != params.version:
            raise ArtifactMismatch(
                f"trace from params version {trace.version}, current is {params.version}"
            )
        dz = np.asarray(dz, dtype=np.float64).reshape(trace.outputs.shape)
        z = trace.outputs
        da = dz * z * (1.0 - z)
        for i in range(len(params.weights) - 1, -1, -1):
            h_prev = trace.inputs if i == 0 else np.maximum(trace.pre[i - 1], 0.0)
            gw[i] += h_prev.T @ da
            gb[i] += da.sum(axis=0)
            dh = da @ params.weights[i].T
            if i > 0:
                da = dh * (trace.pre[i - 1] > 0)
        d_embed = dh[:, fd:fd + params.embed_dim]
        rows_list.append(trace.items)
        grads_list.append(trace.weights[:, None] * d_embed[trace.rows])
    all_items = np.concatenate(rows_list) if rows_list else np.zeros(0, dtype=np.int64)
    all_grads = (np.concatenate(grads_list) if grads_list
                 else np.zeros((0, params.embed_dim)))
    embed_rows, inverse = np.unique(all_items, return_inverse=True)
    embed_grad = np.zeros((embed_rows.size, params.embed_dim))
    np.add.at(embed_grad, inverse.reshape(-1), all_grads)
    return ParamGradients(gw, gb, embed_rows, embed_grad)


def save_model(path, params: ModelParams, rating_scale=None, meta: dict | None = None) -> None:
    """Write the model container.

    Layout: 8-byte magic, little-endian uint32 header length, a JSON header
    (format version, dimensions, rating scale, array table, ``meta``), then
    every array as little-endian float32 in header order.
    """
    arrays = params.arrays()
    header = {
        "format": "clusterrec-model",
        "format_version": MODEL_FORMAT_VERSION,
        "dims": params.dims(),
        "rating_scale": None if rating_scale is None else [float(v) for v in rating_scale],
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "fingerprint": params.fingerprint(),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_model_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    if fh.read(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise DataError(f"{path}: not a model file")
    (size,) = struct.unpack("<I", fh.read(4))
    header = json.loads(fh.read(size).decode())
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise ArtifactMismatch(f"{path}: unsupported model format {header.get('format_version')}")
    return header


def load_model(path) -> tuple[ModelParams, dict]:
    """Read a model container; returns ``(params, header)``."""
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        loaded = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise DataError(f"{path}: truncated array {spec['name']}")
            loaded[spec["name"]] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    n_layers = len(header["dims"]["hidden"]) + 1
    params = ModelParams(
        loaded["embed"],
        [loaded[f"w{i}"] for i in range(n_layers)],
        [loaded[f"b{i}"] for i in range(n_layers)],
        header["dims"]["feat_dim"],
        header["dims"]["demo_dim"],
    )
    return params, header
