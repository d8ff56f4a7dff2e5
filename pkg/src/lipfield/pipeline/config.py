"""Training configuration: a flat YAML document with a few nested groups."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from dataclasses import field as _field
from pathlib import Path

import yaml

from ..losses import LossWeights
from ..synthdata import SceneConfig


class ConfigError(ValueError):
    pass


DEPTH_VARIANTS = ("observed", "prediction")


@dataclass
class FieldConfig:
    hidden: int = 128
    depth: int = 6
    bands: int = 10
    time_bands: int = 4


@dataclass
class ExpertConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch: int = 32
    stride: int = 2  # sync-grid subsampling of the canonical mouth region
    use_negatives: bool = True


@dataclass
class TrainConfig:
    """Everything a training or evaluation run depends on.

    `corpus` points at a generated corpus directory; when it is empty the
    corpus is rendered in memory from `scene` and `data_seed`.
    """

    corpus: str = ""
    scene: dict = _field(default_factory=dict)
    data_seed: int = 0
    seed: int = 0
    weights: dict = _field(default_factory=lambda: asdict(LossWeights()))
    lr_field: float = 5e-4
    lr_depth: float = 1e-2
    lr_blend: float = 1e-3
    iterations: int = 3000
    depth_warmup: int = 500
    blend_crop: int = 64  # 0 = blend the whole frame during training
    r_max: float = 1.0
    hole_probability: float = 0.5
    depth_loss_variant: str = "observed"
    region_margin: int = 2
    blend_base: int = 32
    blend_use_mask: bool = False
    pose_bound_deg: float = 10.0
    log_every: int = 50
    checkpoint_every: int = 0
    field: FieldConfig = _field(default_factory=FieldConfig)
    expert: ExpertConfig = _field(default_factory=ExpertConfig)

    def __post_init__(self):
        if isinstance(self.field, dict):
            self.field = FieldConfig(**self.field)
        if isinstance(self.expert, dict):
            self.expert = ExpertConfig(**self.expert)
        self.validate()

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(**self.weights)

    @property
    def scene_config(self) -> SceneConfig:
        return SceneConfig.from_dict(self.scene)

    def validate(self) -> None:
        try:
            self.loss_weights
            self.scene_config
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        if self.iterations < 0 or self.depth_warmup < 0:
            raise ConfigError("iteration counts must be non-negative")
        for name in ("lr_field", "lr_depth", "lr_blend"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.r_max <= 0:
            raise ConfigError("r_max must be positive")
        if not 0 <= self.hole_probability <= 1:
            raise ConfigError("hole_probability must lie in [0, 1]")
        if self.depth_loss_variant not in DEPTH_VARIANTS:
            raise ConfigError(f"depth_loss_variant must be one of {DEPTH_VARIANTS}")
        if self.blend_crop and self.blend_crop < 16:
            raise ConfigError("blend_crop must be 0 or at least 16")
        if self.corpus and not Path(self.corpus).exists():
            raise ConfigError(f"corpus path {self.corpus} does not exist")
        if self.field.hidden <= 0 or self.field.depth <= 0 or self.field.bands < 0 or self.field.time_bands < 0:
            raise ConfigError("invalid field network shape")
        if self.expert.epochs < 0 or self.expert.stride < 1:
            raise ConfigError("invalid expert settings")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def digest(self) -> bytes:
        """sha256 over the canonical JSON form (32 bytes)."""
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()

    def replace(self, **kw) -> "TrainConfig":
        d = self.to_dict()
        for k, v in kw.items():
            if k in ("field", "expert") and isinstance(v, dict):
                d[k].update(v)
            else:
                d[k] = v
        return TrainConfig.from_dict(d)


def load_config(path) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return TrainConfig.from_dict(data)


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
