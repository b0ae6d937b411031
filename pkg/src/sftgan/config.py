"""Flat ``key = value`` configuration files."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .datagen import CATEGORIES, SceneSpec
from .losses import LossWeights
from .models import ConditioningMode, ModelConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    scale: int = 4
    batch: int = 8
    hr_patch: int = 32
    iters: int = 2000
    base_lr: float = 1e-4
    decay_every: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    lambda_percep: float = 1.0
    lambda_adv: float = 1e-3
    lambda_cls: float = 1e-1
    saturating: bool = False
    mode: str = "sft"
    width: int = 32
    blocks: int = 8
    cond_channels: int = 32
    feature_seed: int = 1234
    categories: tuple[str, ...] = CATEGORIES
    layout: str = "halfplane"
    cells: int = 4
    include_background: bool = False
    scene_size: int = 96
    scene_count: int = 32
    sigma: float = 2.0
    checkpoint: str = ""
    log: str = ""
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("scale", "batch", "hr_patch", "base_lr", "decay_every", "width", "blocks",
                     "cond_channels", "scene_size", "scene_count"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.iters < 0 or self.checkpoint_every < 0:
            raise ConfigError("iters and checkpoint_every must be >= 0")
        if self.hr_patch % self.scale:
            raise ConfigError(f"hr_patch {self.hr_patch} is not divisible by scale {self.scale}")
        if self.hr_patch % 16:
            raise ConfigError("hr_patch must be a multiple of 16 (discriminator and feature strides)")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("Adam betas must lie in [0, 1)")
        try:
            ConditioningMode(self.mode)
            self.loss_weights
            self.scene_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def num_classes(self) -> int:
        return len(self.categories)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_percep, self.lambda_adv, self.lambda_cls)

    def model_config(self) -> ModelConfig:
        return ModelConfig(num_classes=self.num_classes, width=self.width, blocks=self.blocks,
                           cond_channels=self.cond_channels, scale=self.scale, seed=self.seed)

    def scene_spec(self, seed: int = 0) -> SceneSpec:
        return SceneSpec(height=self.scene_size, width=self.scene_size, categories=self.categories,
                         layout=self.layout, cells=self.cells, include_background=self.include_background,
                         sigma=self.sigma, scale=self.scale, seed=seed)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def items(self) -> dict[str, str]:
        return {f.name: format_value(getattr(self, f.name)) for f in fields(self)}

    def config_hash(self) -> int:
        """64-bit hash over everything that shapes the trajectory (not paths or budget)."""
        skip = {"iters", "checkpoint", "log", "checkpoint_every"}
        text = "".join(f"{k}={v}\n" for k, v in sorted(self.items().items()) if k not in skip)
        return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")

    def echo(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items().items())


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(v)
    return repr(v) if isinstance(v, float) else str(v)


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _convert(key: str, raw: str):
    kind = _FIELDS[key].type
    if kind == "bool":
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind.startswith("tuple"):
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    return raw


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return dataclasses.replace(base or TrainConfig(), **values)


def load_config(path) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
