"""Experiment configuration: YAML schema, validation, sweep overrides.

The file is flat sections mirroring the experiment stages (dataset, model,
train, unlearn, attack) plus run-level fields. Validation errors always name
the offending field path.
"""

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .engine.train import TrainConfig

ATTACK_KINDS = ("none", "blend", "push-I", "push-II", "push-targeted")
_ATTACK_ALIASES = {
    "honest": "none",
    "push-i": "push-I",
    "push-ii": "push-II",
    "push_targeted": "push-targeted",
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""


@dataclass
class DatasetConfig:
    kind: str = "blobs"                 # blobs | synth_images | cifar10 | idx
    classes: int = 3
    train_per_class: int = 300
    test_per_class: int = 100
    dim: int = 2                        # blobs
    separation: float = 4.0             # blobs, in cluster-sigma units
    unit_box: bool = True               # blobs: rescale features into [0, 1]
    box_margin: float = 4.0             # blobs: sigma margin of the unit box
    image_size: int = 32                # synth_images
    train_paths: list = field(default_factory=list)   # cifar10 binary batches
    test_path: str = ""
    images_path: str = ""               # idx train pair
    labels_path: str = ""
    test_images_path: str = ""          # idx test pair
    test_labels_path: str = ""
    max_per_class: int = 0              # 0 = no cap (file-backed datasets)


@dataclass
class ModelConfig:
    arch: str = "mlp"                   # mlp | vgg_small | resnet_small
    hidden: list = field(default_factory=lambda: [16])
    blocks: int = 1                     # vgg_small
    filters: int = 8
    dense_units: int = 32


@dataclass
class UnlearnSettings:
    method: str = "gradient_overwrite"  # gradient_overwrite | finetune
    tau: float = 0.01
    iterations: int = 1
    noise_kind: str = "uniform01"
    epochs: int = 3                     # finetune
    learning_rate: float = 1e-3         # finetune


@dataclass
class AttackConfig:
    kind: str = "none"
    lam: float = 0.5                    # blend
    donor_class: int = 1                # blend
    donor_count: int = 0                # blend: 0 = match the request size
    c: float = 1.0                      # push
    k: float = 0.0
    eta: float = 0.01
    h: float = 1e-4
    max_iters: int = 500
    l2_budget: float = 20.0
    coords_per_iter: int = 128
    target_class: int = 1               # push-targeted
    mode: str = "II"                    # push-targeted selection mode


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    unlearn: UnlearnSettings = field(default_factory=UnlearnSettings)
    attack: AttackConfig = field(default_factory=AttackConfig)
    unlearned_class: int = 0
    unlearned_fraction: float = 0.5
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = ""


_SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "unlearn": UnlearnSettings,
    "attack": AttackConfig,
}
_TOP_FIELDS = ("name", "unlearned_class", "unlearned_fraction", "seeds", "output_dir")


def _build_section(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown field")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root: expected a mapping")
    for key in raw:
        if key not in _SECTIONS and key not in _TOP_FIELDS:
            raise ConfigError(f"{key}: unknown field")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        kwargs[name] = _build_section(cls, raw.get(name, {}), name)
    for name in _TOP_FIELDS:
        if name in raw:
            kwargs[name] = raw[name]
    cfg = ExperimentConfig(**kwargs)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig):
    d, m, a, u = cfg.dataset, cfg.model, cfg.attack, cfg.unlearn
    if d.kind not in ("blobs", "synth_images", "cifar10", "idx"):
        raise ConfigError(f"dataset.kind: unknown kind {d.kind!r}")
    if d.kind in ("blobs", "synth_images"):
        if d.classes < 2:
            raise ConfigError("dataset.classes: must be >= 2")
        if d.train_per_class < 2 or d.test_per_class < 1:
            raise ConfigError("dataset.train_per_class/test_per_class: too small")
        if d.kind == "blobs" and d.separation <= 0:
            raise ConfigError("dataset.separation: must be positive")
    if d.kind == "cifar10" and not d.train_paths:
        raise ConfigError("dataset.train_paths: required for cifar10")
    if d.kind == "idx" and not (d.images_path and d.labels_path):
        raise ConfigError("dataset.images_path/labels_path: required for idx")
    if m.arch not in ("mlp", "vgg_small", "resnet_small"):
        raise ConfigError(f"model.arch: unknown arch {m.arch!r}")
    if m.arch == "mlp" and not m.hidden:
        raise ConfigError("model.hidden: needs at least one layer width")
    if u.method not in ("gradient_overwrite", "finetune"):
        raise ConfigError(f"unlearn.method: unknown method {u.method!r}")
    if u.tau < 0:
        raise ConfigError("unlearn.tau: must be >= 0")
    if u.iterations < 1:
        raise ConfigError("unlearn.iterations: must be >= 1")
    kind = _ATTACK_ALIASES.get(a.kind, a.kind)
    if kind not in ATTACK_KINDS:
        raise ConfigError(f"attack.kind: unknown kind {a.kind!r}")
    a.kind = kind
    if not 0.0 <= a.lam <= 1.0:
        raise ConfigError("attack.lam: must lie in [0, 1]")
    if a.l2_budget <= 0:
        raise ConfigError("attack.l2_budget: must be positive")
    if a.mode not in ("I", "II"):
        raise ConfigError("attack.mode: must be 'I' or 'II'")
    if not 0.0 < cfg.unlearned_fraction <= 0.5:
        raise ConfigError("unlearned_fraction: must lie in (0, 0.5]")
    if not cfg.seeds:
        raise ConfigError("seeds: must be nonempty")
    if not all(isinstance(s, int) for s in cfg.seeds):
        raise ConfigError("seeds: must be integers")
    if cfg.unlearned_class < 0:
        raise ConfigError("unlearned_class: must be >= 0")
    if kind == "blend" and a.donor_class == cfg.unlearned_class:
        raise ConfigError("attack.donor_class: must differ from unlearned_class")
    if kind == "push-targeted" and a.target_class == cfg.unlearned_class:
        raise ConfigError("attack.target_class: must differ from unlearned_class")
    if cfg.train.epochs < 0 or cfg.train.batch_size < 1 or cfg.train.learning_rate <= 0:
        raise ConfigError("train: epochs >= 0, batch_size >= 1, learning_rate > 0 required")


def load_config(path, overrides=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing config file: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    raw.setdefault("name", path.stem)
    for dotted, value in (overrides or {}).items():
        apply_override(raw, dotted, value)
    return config_from_dict(raw)


def apply_override(raw: dict, dotted_key: str, value):
    """Set a dotted path (e.g. attack.lam) in the raw config mapping."""
    parts = dotted_key.split(".")
    node = raw
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"{dotted_key}: {part} is not a section")
        node = nxt
    node[parts[-1]] = value
    return raw


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {name: vars(getattr(cfg, name)).copy() for name in _SECTIONS}
    for name in _TOP_FIELDS:
        out[name] = getattr(cfg, name)
    out["seeds"] = list(cfg.seeds)
    return out
