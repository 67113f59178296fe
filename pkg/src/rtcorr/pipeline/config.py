"""Training configuration and its YAML file form.

Example file::

    epochs: 75
    lr: 1.0e-4
    seed: 0
    variant: base            # base | imgfeat | imgloss
    geodesic_pairs: 1000
    checkpoint_every: 1
    model:
      geo_width: 128
      geo_depth: 6
      img_width: 64
      time_steps: 5
    weights:
      w_reg: 1.0
      w_arap: 100.0
      w_geo: 1.0
      lambda_imaging: 1000.0
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..corrnet import ModelConfig
from ..losses import LossWeights

VARIANTS = ("base", "imgfeat", "imgloss")
_ALIASES = {"image_features": "imgfeat", "imaging_loss": "imgloss"}


class ConfigError(ValueError):
    pass


def canonical_variant(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return name


@dataclass
class TrainConfig:
    epochs: int = 75
    lr: float = 1e-4
    seed: int = 0
    variant: str = "base"
    geodesic_pairs: int = 1000
    checkpoint_every: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.geodesic_pairs < 1 or self.checkpoint_every < 1:
            raise ConfigError("geodesic_pairs and checkpoint_every must be >= 1")
        if self.model.use_image_features != (self.variant == "imgfeat"):
            self.model = ModelConfig(**{**self.model.to_dict(), "use_image_features": self.variant == "imgfeat"})

    @property
    def needs_patches(self) -> bool:
        return self.variant != "base"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> TrainConfig:
        raw = dict(raw or {})
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            model = ModelConfig(**raw.pop("model", {}) or {})
            weights = LossWeights(**raw.pop("weights", {}) or {})
            return cls(model=model, weights=weights, **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides: dict | None = None) -> TrainConfig:
    """Read a YAML config (or start from defaults) and apply dotted-key overrides.

    ``overrides`` maps keys such as ``"lr"`` or ``"model.time_steps"`` to
    values; ``None`` values are ignored so unset CLI flags fall through.
    """
    raw: dict = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return TrainConfig.from_dict(raw)


def save_config(config: TrainConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
    return path
