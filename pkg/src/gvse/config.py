"""Experiment configuration: JSON schema, strict parsing, content digest.

Unknown keys are rejected everywhere — a typo in an ablation sweep should
fail loudly, not silently fall back to a default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigError
from .model import FUSION_MODES, WIRING_STRATEGIES, config_digest

DEFAULT_BLOCKS = [[16, 2, 2, 0], [32, 2, 2, 0], [64, 2, 2, 0], [64, 3, 1, 1]]


@dataclass
class DataConfig:
    synthetic: dict | None = None  # SyntheticSpec fields
    paths: dict | None = None  # images / labels / attributes / split

    def __post_init__(self):
        if (self.synthetic is None) == (self.paths is None):
            raise ConfigError("data config needs exactly one of 'synthetic' or 'paths'")
        if self.paths is not None:
            required = {"images", "labels", "attributes", "split"}
            if set(self.paths) != required:
                raise ConfigError(f"data.paths must have exactly the keys {sorted(required)}")


@dataclass
class GraphConfig:
    type: str = "attribute"
    delta: float = 0.75
    binarize: str = "nonzero"
    self_loops: bool = True
    category_threshold: float = 0.5

    def __post_init__(self):
        if self.type not in ("attribute", "category"):
            raise ConfigError(f"graph.type must be 'attribute' or 'category', got {self.type!r}")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"graph.delta must lie in [0, 1], got {self.delta}")
        if self.binarize not in ("nonzero", "mean-threshold"):
            raise ConfigError(f"unknown graph.binarize mode {self.binarize!r}")


@dataclass
class EmbeddingConfig:
    d: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("embedding.d must be >= 1")


@dataclass
class ModelSection:
    blocks: list = field(default_factory=lambda: [list(b) for b in DEFAULT_BLOCKS])
    wiring: str = "each-stage"
    fusion: str = "concat"
    gvse_enabled: bool = True
    latent: bool = True
    latent_dim: int = 32
    d_node: int = 16
    gcn_hidden: int = 64

    def __post_init__(self):
        if self.wiring not in WIRING_STRATEGIES:
            raise ConfigError(f"unknown model.wiring {self.wiring!r}")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"unknown model.fusion {self.fusion!r}")
        for b in self.blocks:
            if len(b) != 4 or any(int(v) != v or v < 0 for v in b):
                raise ConfigError(f"model.blocks entries must be [channels, kernel, stride, pad], got {b}")


@dataclass
class TrainSection:
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 30
    gamma: float = 0.5
    alpha: float = 1.0
    transductive: bool = False
    bias_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.gamma < 0 or self.alpha < 0:
            raise ConfigError("lr, gamma, and alpha must be non-negative")
        if self.batch < 1 or self.epochs < 0:
            raise ConfigError("train.batch must be >= 1 and train.epochs >= 0")


@dataclass
class ExperimentConfig:
    data: DataConfig
    graph: GraphConfig = field(default_factory=GraphConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def digest(self) -> str:
        return config_digest(self.to_dict())


_SECTIONS = {
    "data": DataConfig,
    "graph": GraphConfig,
    "embedding": EmbeddingConfig,
    "model": ModelSection,
    "train": TrainSection,
}


def _build_section(cls, obj: dict, name: str):
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(obj) - fields
    if unknown:
        raise ConfigError(f"unknown keys in '{name}' section: {sorted(unknown)}")
    return cls(**obj)


def parse_config(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(obj) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    if "data" not in obj:
        raise ConfigError("config is missing the 'data' section")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in obj:
            kwargs[name] = _build_section(cls, obj[name], name)
    if "data" in kwargs and kwargs["data"].synthetic is not None:
        from .data import SyntheticSpec

        allowed = set(SyntheticSpec.__dataclass_fields__)
        unknown = set(kwargs["data"].synthetic) - allowed
        if unknown:
            raise ConfigError(f"unknown keys in data.synthetic: {sorted(unknown)}")
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(obj)
