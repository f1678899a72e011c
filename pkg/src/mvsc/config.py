"""Flat ``key=value`` run configuration with presets and flag overrides.

Resolution order, lowest first: built-in defaults, preset, config file,
command-line flags. ``MVSC_SEED`` replaces the default seed.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import ConfigError, ValidationError
from .network import NetConfig
from .selection import SelectionConfig
from .train import TrainConfig
from .volume import SynthSpec

PRESETS: dict[str, dict[str, object]] = {
    "desk": {},
    "adni": {"K": 128, "d": 512, "patch": 32, "d_t": 768, "height": 256, "width": 256,
             "warmup_epochs": 10, "cosine_epochs": 150},
    "aibl": {"K": 32, "d": 128, "patch": 16, "d_t": 768, "height": 256, "width": 256,
             "warmup_epochs": 10, "cosine_epochs": 150},
    "oasis": {"K": 32, "d": 128, "patch": 16, "d_t": 768, "height": 256, "width": 256,
              "warmup_epochs": 10, "cosine_epochs": 150},
}
PINNED = ("K", "d", "patch")

CHOICES = {
    "preset": tuple(PRESETS),
    "extractor": ("stub", "sidecar"),
    "baseline": ("none", "mean", "max"),
    "text": ("synthetic", "label", "zero"),
}


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    # slice selection
    k: int = 4
    zeta0: float = 0.2
    zeta1: float = 0.8
    bins: int = 64
    eps: float = 1e-12
    # network
    d: int = 32
    K: int = 4
    patch: int = 16
    d_t: int = 32
    heads: int = 0
    # extractor / head
    extractor: str = "stub"
    n_feat: int = 128
    extractor_channels: int = 32
    n_classes: int = 2
    baseline: str = "none"
    # training
    warmup_epochs: int = 2
    cosine_epochs: int = 30
    batch_size: int = 8
    lr_max: float = 1e-4
    weight_decay: float = 1e-4
    # synthetic data
    text: str = "synthetic"
    per_class: int = 40
    val_per_class: int = 20
    depth: int = 32
    height: int = 64
    width: int = 64
    # paths; empty means "derived from out_dir"
    out_dir: str = "mvsc_run"
    manifest: str = ""
    val_manifest: str = ""
    embeddings_dir: str = ""
    checkpoint: str = ""
    features: str = ""
    val_features: str = ""
    volume: str = ""

    # ---- derived views
    def selection(self) -> SelectionConfig:
        return SelectionConfig(self.zeta0, self.zeta1, self.k, self.bins, self.eps)

    def net(self) -> NetConfig:
        return NetConfig(d=self.d, K=self.K, patch=self.patch, d_t=self.d_t, heads=self.heads)

    def training(self) -> TrainConfig:
        return TrainConfig(self.warmup_epochs, self.cosine_epochs, self.batch_size, self.lr_max,
                           self.weight_decay, self.seed, self.n_classes)

    def synth(self, per_class: int | None = None) -> SynthSpec:
        return SynthSpec(n_classes=self.n_classes, per_class=per_class or self.per_class,
                         shape=(self.depth, self.height, self.width))

    def path(self, key: str) -> Path:
        explicit = getattr(self, key)
        if explicit:
            return Path(explicit)
        out = Path(self.out_dir)
        derived = {"manifest": out / "train.csv", "val_manifest": out / "val.csv",
                   "embeddings_dir": out / "embeddings", "checkpoint": out / "model.mvscmdl",
                   "features": out / "features.mvscftr",
                   "val_features": out / "val_features.mvscftr"}
        if key not in derived:
            raise ConfigError(f"{key} has no derived default")
        return derived[key]


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw) -> object:
    if key not in FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = FIELDS[key].default
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def read_config_file(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value
    return values


def validate(cfg: RunConfig) -> RunConfig:
    for key, options in CHOICES.items():
        if getattr(cfg, key) not in options:
            raise ValidationError(key, f"must be one of {options}, got {getattr(cfg, key)!r}")
    if not 0.0 <= cfg.zeta0 < cfg.zeta1 <= 1.0:
        raise ValidationError("zeta0" if cfg.zeta0 >= cfg.zeta1 or cfg.zeta0 < 0 else "zeta1",
                              f"need 0 <= zeta0 < zeta1 <= 1, got ({cfg.zeta0}, {cfg.zeta1})")
    positive = ("k", "bins", "d", "patch", "d_t", "n_feat", "extractor_channels", "n_classes",
                "batch_size", "per_class", "depth", "height", "width")
    for key in positive:
        if getattr(cfg, key) < 1:
            raise ValidationError(key, "must be >= 1")
    for key in ("K", "heads", "warmup_epochs", "cosine_epochs", "val_per_class"):
        if getattr(cfg, key) < 0:
            raise ValidationError(key, "must be >= 0")
    if cfg.eps <= 0:
        raise ValidationError("eps", "must be > 0")
    if cfg.lr_max <= 0:
        raise ValidationError("lr_max", "must be > 0")
    if cfg.weight_decay < 0:
        raise ValidationError("weight_decay", "must be >= 0")
    if cfg.warmup_epochs + cfg.cosine_epochs < 1:
        raise ValidationError("cosine_epochs", "schedule needs at least one epoch")
    heads = cfg.net().n_heads
    if cfg.d % heads:
        raise ValidationError("heads", f"d={cfg.d} not divisible by {heads} heads")
    if cfg.height != cfg.width:
        raise ValidationError("width", "slices must be square")
    if cfg.height % cfg.patch:
        raise ValidationError("patch", f"slice size {cfg.height} not divisible by {cfg.patch}")
    cropped = int(cfg.zeta1 * cfg.depth) - int(cfg.zeta0 * cfg.depth)
    if cfg.k > cropped:
        raise ValidationError("k", f"k={cfg.k} exceeds the {cropped} slices in the cropped range")
    pinned = PRESETS[cfg.preset]
    for key in PINNED:
        if key in pinned and getattr(cfg, key) != pinned[key]:
            raise ValidationError(key, f"preset {cfg.preset!r} pins {key}={pinned[key]}")
    return cfg


def parse_config(path=None, overrides: Mapping[str, object] | None = None,
                 env: Mapping[str, str] | None = None) -> RunConfig:
    env = os.environ if env is None else env
    file_values = read_config_file(path) if path else {}
    overrides = dict(overrides or {})
    for key in overrides:
        if key not in FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
    values: dict[str, object] = {}
    if "MVSC_SEED" in env:
        values["seed"] = _coerce("seed", env["MVSC_SEED"])
    preset = str(overrides.get("preset", file_values.get("preset", "desk")))
    if preset not in PRESETS:
        raise ValidationError("preset", f"must be one of {tuple(PRESETS)}, got {preset!r}")
    values.update(PRESETS[preset])
    values["preset"] = preset
    for source in (file_values, overrides):
        for key, raw in source.items():
            values[key] = _coerce(key, raw)
    return validate(RunConfig(**values))


def count_parameters(cfg: RunConfig) -> int:
    """Trainable scalars in the surrogate network plus classification head."""
    from .pipeline import build_model

    net = cfg.net() if cfg.baseline == "none" else None
    return build_model(net, cfg.n_feat, cfg.n_classes, cfg.seed).num_parameters()
