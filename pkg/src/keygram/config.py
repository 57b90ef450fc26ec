"""Strict JSON configuration for the toy backbone and its harnesses.

Sections mirror the component split: parser, memory, fusion, backbone,
task, train, ablation. Unknown fields anywhere are rejected so stale
configs fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class ParserConfig:
    max_words: int = 4
    lexicon_dir: str | None = None


@dataclass(frozen=True)
class MemoryConfig:
    slots: int = 8
    heads: int = 4
    head_width: int = 32
    capacity: int = 8192
    init_scale: float = 0.02


@dataclass(frozen=True)
class FusionConfig:
    conv_span: int = 8  # defaults to the slot budget
    conv_mode: str = "token"
    slot_groups: int = 8


@dataclass(frozen=True)
class BackboneConfig:
    blocks: int = 6
    width: int = 64
    mlp_ratio: int = 4
    insert_layers: tuple[int, ...] = (0, 2, 4)


@dataclass(frozen=True)
class TaskConfig:
    attributes: int = 10
    objects: int = 30
    places: int = 30
    holdout_fraction: float = 0.2
    target_labels: int = 15


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    batch_size: int = 32
    lr_dense: float = 3e-3
    lr_memory: float = 0.5
    eval_every: int = 100
    eval_samples: int = 512
    seed: int = 0


@dataclass(frozen=True)
class AblationConfig:
    candidate_layers: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    stages: int = 3
    easy_weight: float = 1.0
    hard_weight: float = 9.0
    steps: int = 200
    batch_size: int = 32


@dataclass(frozen=True)
class Config:
    parser: ParserConfig = field(default_factory=ParserConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(Config)}


def _build_section(cls, name: str, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown fields in {name!r}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad section {name!r}: {e}") from e


def parse_config(data: dict) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object")
    classes = {
        "parser": ParserConfig, "memory": MemoryConfig, "fusion": FusionConfig,
        "backbone": BackboneConfig, "task": TaskConfig, "train": TrainConfig,
        "ablation": AblationConfig,
    }
    unknown = set(data) - set(classes)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    kwargs = {name: _build_section(cls, name, data[name])
              for name, cls in classes.items() if name in data}
    return Config(**kwargs)


def load_config(path: str | Path) -> Config:
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_config(data)


def config_dict(config: Config) -> dict:
    return dataclasses.asdict(config)


def config_hash(config: Config) -> str:
    canonical = json.dumps(config_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def with_insert_layers(config: Config, layers: tuple[int, ...]) -> Config:
    backbone = dataclasses.replace(config.backbone, insert_layers=tuple(layers))
    return dataclasses.replace(config, backbone=backbone)


def with_seed(config: Config, seed: int) -> Config:
    train = dataclasses.replace(config.train, seed=seed)
    return dataclasses.replace(config, train=train)
