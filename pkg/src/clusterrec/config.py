"""Declarative run configuration: one JSON document holding every knob.

Unknown keys are rejected at every level so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from clusterrec.dataset import RatingScale
from clusterrec.errors import DataError
from clusterrec.eval import METHODS, BenchmarkConfig
from clusterrec.model import ModelConfig
from clusterrec.training import TrainConfig


@dataclass(frozen=True)
class DataSection:
    ratings: str | None = None
    items: str | None = None
    demographics: str | None = None
    rating_min: float = 0.5
    rating_max: float = 5.0
    implicit: bool = False

    @property
    def scale(self) -> RatingScale | None:
        return None if self.implicit else RatingScale(self.rating_min, self.rating_max)


@dataclass(frozen=True)
class ModelSection:
    embed_dim: int = 32
    hidden: tuple[int, ...] = (128, 64)
    n_clusters: int = 64
    seed: int = 0

    def build(self) -> ModelConfig:
        return ModelConfig(self.embed_dim, tuple(self.hidden), self.n_clusters, self.seed)


@dataclass(frozen=True)
class ShortlistSection:
    k: int = 3
    prune_top: int | None = None
    # number of user slices; null means one per worker
    parts: int | None = None


@dataclass(frozen=True)
class RecommendSection:
    top_n: int = 50
    exclude_seen: bool = True


@dataclass(frozen=True)
class EvalSection:
    methods: tuple[str, ...] = METHODS
    warmup_frac: float = 0.5
    mask_frac: float = 0.25
    split_mode: str = "random"
    seed: int = 0
    precision_k: int = 50
    als_factors: int = 32
    als_reg: float = 0.1
    als_sweeps: int = 15
    timing_repeats: int = 3
    per_user: bool = False


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs/default"
    model: str = "model.bin"
    loss: str = "loss.csv"
    shortlist: str = "shortlist.csv"
    shortlist_bin: str = "shortlist.bin"
    recommendations: str = "recommendations.csv"
    report: str = "report.csv"
    per_user: str = "per_user.csv"

    def path(self, name: str) -> Path:
        return Path(self.dir) / getattr(self, name)


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    shortlist: ShortlistSection = field(default_factory=ShortlistSection)
    recommend: RecommendSection = field(default_factory=RecommendSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)
    # worker threads; null means all available cores
    parallelism: int | None = None
    deterministic: bool = False

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def benchmark_config(self) -> BenchmarkConfig:
        e = self.eval
        return BenchmarkConfig(
            methods=tuple(e.methods), warmup_frac=e.warmup_frac, mask_frac=e.mask_frac,
            split_mode=e.split_mode, seed=e.seed, precision_k=e.precision_k,
            top_n=self.recommend.top_n, clusters_per_user=self.shortlist.k,
            prune_top=self.shortlist.prune_top, exclude_seen=self.recommend.exclude_seen,
            model=self.model.build(), train=self.train, als_factors=e.als_factors,
            als_reg=e.als_reg, als_sweeps=e.als_sweeps, timing_repeats=e.timing_repeats,
        )


def _default(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def _build(cls, values, where: str):
    if not isinstance(values, dict):
        raise DataError(f"config section {where or 'root'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise DataError(f"unknown config keys in {where or 'root'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        default = _default(fields[name])
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}".lstrip("."))
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid config in {where or 'root'}: {exc}") from None


def config_from_dict(values: dict) -> RunConfig:
    return _build(RunConfig, values, "")


def _set_path(doc: dict, dotted: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    *parents, leaf = dotted.split(".")
    node = doc
    for p in parents:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise DataError(f"cannot set {dotted}: {p} is not a section")
    node[leaf] = value


def load_config(path=None, overrides: list[str] = ()) -> RunConfig:
    """Read a JSON config (optional) and apply ``section.key=value`` overrides.

    Override values are parsed as JSON when possible, else kept as strings.
    """
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise DataError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise DataError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        _set_path(doc, key.strip(), raw)
    return config_from_dict(doc)
