"""Per-level training targets and anchor weight maps for one scene."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GroundTruthBox, PyramidSpec, encode_distances
from .selection import positive_cells
from .weighting import SoftWeightConfig, centerness


@dataclass
class LevelTargets:
    cls: np.ndarray  # (H, W) int, 0 = background
    loc: np.ndarray  # (H, W, 4), zero on negatives
    weight: np.ndarray  # (H, W), 1 on negatives
    positive: np.ndarray  # (H, W) bool
    owner: np.ndarray  # (H, W) instance index or -1


def build_targets(
    boxes: list[GroundTruthBox],
    assignments: list[list[tuple[int, float | None]]],
    pyramid: PyramidSpec,
    weighting: SoftWeightConfig = SoftWeightConfig(),
    z: float = 4.0,
) -> list[LevelTargets]:
    """Targets for every level from per-instance ``(level_index, level_weight)`` lists.

    An anchor is positive when its instance is assigned to that level and the
    anchor lies inside the valid box. Where valid boxes overlap on a level the
    smaller instance wins (then lower class id, then lower index).
    """
    out = []
    for li, level in enumerate(pyramid.levels):
        rows, cols = pyramid.grid_size(level)
        t = LevelTargets(
            cls=np.zeros((rows, cols), dtype=np.int64),
            loc=np.zeros((rows, cols, 4)),
            weight=np.ones((rows, cols)),
            positive=np.zeros((rows, cols), dtype=bool),
            owner=np.full((rows, cols), -1, dtype=np.int64),
        )
        here = [(k, w) for k, a in enumerate(assignments) for (l, w) in a if l == li]
        # write losers first so the winner's values remain
        here.sort(key=lambda kw: (boxes[kw[0]].area, boxes[kw[0]].class_id, kw[0]), reverse=True)
        xs, ys = pyramid.anchor_centers(level)
        for k, level_w in here:
            box = boxes[k]
            jj, ii = positive_cells(box, pyramid, level, weighting.epsilon)
            if jj.size == 0:
                continue
            d = encode_distances(xs[ii], ys[jj], pyramid.stride(level), box, z)
            w = np.ones(jj.size) if level_w is None else np.full(jj.size, float(level_w))
            if weighting.enabled:
                w = w * centerness(d, weighting.eta)
            t.cls[jj, ii] = box.class_id
            t.loc[jj, ii] = d
            t.weight[jj, ii] = w
            t.positive[jj, ii] = True
            t.owner[jj, ii] = k
        out.append(t)
    return out


def hard_assignments(levels: list[int | None]) -> list[list[tuple[int, None]]]:
    return [[] if l is None else [(l, None)] for l in levels]
