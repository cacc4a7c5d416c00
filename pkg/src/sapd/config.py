"""Run configuration with a flat dotted-key namespace.

Files are JSON objects mapping keys such as ``"weighting.eta"`` to values.
Unknown keys are rejected; missing keys take the defaults below.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import SceneConfig
from .geometry import PyramidSpec
from .losses import FocalConfig
from .model import ModelConfig
from .selection import SelectionConfig
from .weighting import SoftWeightConfig


@dataclass(frozen=True)
class GeometryConfig:
    min_level: int = 2
    max_level: int = 5
    z: float = 4.0


@dataclass(frozen=True)
class TrainConfig:
    train_count: int = 2000
    val_count: int = 200
    data_seed: int = 0
    val_seed: int = 1
    seed: int = 0
    batch_size: int = 8
    epochs: int = 8
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float = 35.0  # global L2 norm; 0 disables
    warmup_iters: int = 100
    phase_switch: float = 0.5
    lr_drops: tuple = (0.75, 0.9167)
    flip: bool = True
    soft_select: bool = True
    divergence_factor: float = 1e3


@dataclass(frozen=True)
class InferConfig:
    score_threshold: float = 0.05
    pre_nms_top: int = 1000
    nms_threshold: float = 0.5


@dataclass(frozen=True)
class AblateConfig:
    soft_weight: tuple = (True, False)
    soft_select: tuple = (True, False)
    eta: tuple = (1.0,)
    top_k: tuple = (3,)
    mode: tuple = ("both",)
    seeds: tuple = (0,)


@dataclass(frozen=True)
class RunConfig:
    data: SceneConfig = field(default_factory=SceneConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weighting: SoftWeightConfig = field(default_factory=SoftWeightConfig)
    focal: FocalConfig = field(default_factory=FocalConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def __post_init__(self):
        n = self.geometry.max_level - self.geometry.min_level + 1
        if self.selection.top_k > n:
            raise ValueError(f"selection.top_k={self.selection.top_k} exceeds the {n} pyramid levels")
        self.pyramid  # validates image divisibility

    @property
    def pyramid(self) -> PyramidSpec:
        s = self.data.image_size
        return PyramidSpec(self.geometry.min_level, self.geometry.max_level, s, s)

    def to_flat(self) -> dict:
        flat = {}
        for sec in dataclasses.fields(self):
            for f in dataclasses.fields(getattr(self, sec.name)):
                v = getattr(getattr(self, sec.name), f.name)
                flat[f"{sec.name}.{f.name}"] = list(v) if isinstance(v, tuple) else v
        return flat

    def replace(self, **overrides) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"weighting.eta": 2.0})``."""
        flat = self.to_flat()
        flat.update(overrides)
        return from_flat(flat)


def _coerce(value, default):
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = json.loads(value) if value.strip().startswith("[") else value.split(",")
        inner = default[0] if default else None
        return tuple(_coerce(v, inner) if inner is not None else v for v in value)
    return str(value) if isinstance(default, str) else value


def from_flat(flat: dict) -> RunConfig:
    defaults = RunConfig()
    sections = {sec.name: {} for sec in dataclasses.fields(defaults)}
    known = defaults.to_flat()
    for key, value in flat.items():
        if key not in known:
            raise KeyError(f"unknown config key {key!r}")
        sec, name = key.split(".", 1)
        sections[sec][name] = _coerce(value, getattr(getattr(defaults, sec), name))
    return RunConfig(
        **{name: dataclasses.replace(getattr(defaults, name), **vals) for name, vals in sections.items()}
    )


def parse_override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ValueError(f"override must look like key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def load_config(path=None, overrides=()) -> RunConfig:
    flat = {}
    if path is not None:
        flat = json.loads(Path(path).read_text())
        if not isinstance(flat, dict):
            raise ValueError(f"{path}: config must be a JSON object")
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        flat[key] = value
    return from_flat(flat)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_flat(), indent=2, sort_keys=True) + "\n")
