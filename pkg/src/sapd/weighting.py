"""Per-anchor attention weights: generalized centerness and level weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import AnchorPoint, GroundTruthBox, contains, encode_targets, valid_box

MODES = ("both", "cls_only", "loc_only", "off")


@dataclass(frozen=True)
class SoftWeightConfig:
    eta: float = 1.0
    epsilon: float = 0.2
    mode: str = "both"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")

    @property
    def enabled(self) -> bool:
        return self.mode != "off"


def centerness(d, eta: float = 1.0):
    """Generalized centerness of distance vectors ``d`` (..., 4) raised to ``eta``.

    ``min(l, r) min(t, b) / (max(l, r) max(t, b))``; 1 at the box center,
    falling toward 0 at the edges.
    """
    d = np.asarray(d, dtype=np.float64)
    lr = d[..., [0, 2]]
    tb = d[..., [1, 3]]
    ratio = (lr.min(-1) * tb.min(-1)) / (lr.max(-1) * tb.max(-1))
    if eta == 0:
        return np.ones_like(ratio)
    return ratio**eta


def anchor_weight(
    anchor: AnchorPoint,
    assigned_instance: GroundTruthBox | None,
    level_weight: float | None,
    cfg: SoftWeightConfig,
    z: float = 4.0,
) -> float:
    """Loss weight of one anchor point.

    Negatives weigh 1. A positive weighs ``level_weight * centerness``; a
    missing ``level_weight`` counts as 1 and ``mode="off"`` drops the
    centerness factor.
    """
    if assigned_instance is None:
        return 1.0
    if not contains(valid_box(assigned_instance, cfg.epsilon), anchor.x, anchor.y):
        return 1.0
    w = 1.0 if level_weight is None else float(level_weight)
    if cfg.enabled:
        w *= float(centerness(encode_targets(anchor, assigned_instance, z), cfg.eta))
    return w


def split_by_mode(weights: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Weights applied to the (classification, localization) terms under ``mode``."""
    ones = np.ones_like(weights)
    if mode == "cls_only":
        return weights, ones
    if mode == "loc_only":
        return ones, weights
    if mode == "off":
        return ones, ones
    return weights, weights
