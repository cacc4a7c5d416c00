"""Boxes, pyramid layout, anchor points and distance-target encoding.

Coordinates: origin top-left, x to the right, y down. Ground truth is kept in
center form ``(cx, cy, w, h)``; detections and decoded boxes in corner form
``(x1, y1, x2, y2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DECODE_FLOOR = 1e-4


@dataclass(frozen=True)
class PyramidSpec:
    min_level: int
    max_level: int
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.min_level > self.max_level:
            raise ValueError(f"min_level {self.min_level} > max_level {self.max_level}")
        top = 2**self.max_level
        if self.image_width % top or self.image_height % top:
            raise ValueError(
                f"image size {self.image_width}x{self.image_height} not divisible by {top}"
            )

    @property
    def levels(self) -> list[int]:
        return list(range(self.min_level, self.max_level + 1))

    @property
    def num_levels(self) -> int:
        return self.max_level - self.min_level + 1

    def stride(self, level: int) -> int:
        return 2**level

    def grid_size(self, level: int) -> tuple[int, int]:
        """(rows, cols) of the anchor lattice at ``level``."""
        s = self.stride(level)
        return -(-self.image_height // s), -(-self.image_width // s)

    def anchor_centers(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Image-space X (per column) and Y (per row) of the anchors at ``level``."""
        s = self.stride(level)
        rows, cols = self.grid_size(level)
        return s * (np.arange(cols) + 0.5), s * (np.arange(rows) + 0.5)


@dataclass(frozen=True)
class GroundTruthBox:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> np.ndarray:
        return np.array(
            [self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2]
        )

    def clipped(self, width: float, height: float) -> "GroundTruthBox":
        x1, y1, x2, y2 = self.corners()
        if x1 >= 0 and y1 >= 0 and x2 <= width and y2 <= height:
            return self
        x1, x2 = max(x1, 0.0), min(x2, float(width))
        y1, y2 = max(y1, 0.0), min(y2, float(height))
        if x2 <= x1 or y2 <= y1:
            raise ValueError(f"box {self} lies outside the {width}x{height} image")
        return GroundTruthBox(self.class_id, (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class AnchorPoint:
    level: int
    i: int  # column
    j: int  # row

    @property
    def stride(self) -> int:
        return 2**self.level

    @property
    def x(self) -> float:
        return self.stride * (self.i + 0.5)

    @property
    def y(self) -> float:
        return self.stride * (self.j + 0.5)


def valid_box(box: GroundTruthBox, epsilon: float) -> GroundTruthBox:
    """Central box shrunk by ``epsilon`` in width and height."""
    return GroundTruthBox(box.class_id, box.cx, box.cy, epsilon * box.w, epsilon * box.h)


def contains(box: GroundTruthBox, x, y):
    """Closed-boundary membership test; broadcasts over array ``x``/``y``."""
    return (np.abs(np.asarray(x) - box.cx) <= box.w / 2) & (np.abs(np.asarray(y) - box.cy) <= box.h / 2)


def encode_distances(x, y, stride, box: GroundTruthBox, z: float) -> np.ndarray:
    """Normalized (left, top, right, bottom) distances from points to ``box`` edges.

    ``x`` and ``y`` broadcast; the result has a trailing axis of 4.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x, y = np.broadcast_arrays(x, y)
    scale = z * stride
    return np.stack(
        [
            (x - (box.cx - box.w / 2)) / scale,
            (y - (box.cy - box.h / 2)) / scale,
            ((box.cx + box.w / 2) - x) / scale,
            ((box.cy + box.h / 2) - y) / scale,
        ],
        axis=-1,
    )


def encode_targets(anchor: AnchorPoint, box: GroundTruthBox, z: float) -> np.ndarray:
    if not (contains(box, anchor.x, anchor.y)):
        raise ValueError(f"anchor at ({anchor.x}, {anchor.y}) is outside {box}")
    return encode_distances(anchor.x, anchor.y, anchor.stride, box, z)


def decode_distances(x, y, stride, d, z: float, image_size=None) -> np.ndarray:
    """Inverse of :func:`encode_distances` to corner form, optionally clipped.

    ``image_size`` is ``(width, height)``. Pixel distances are floored at
    ``DECODE_FLOOR`` so an untrained network never yields inverted boxes.
    """
    scale = z * np.asarray(stride, dtype=np.float64)
    d = np.maximum(np.asarray(d, dtype=np.float64) * scale[..., None], DECODE_FLOOR)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    boxes = np.stack(
        [x - d[..., 0], y - d[..., 1], x + d[..., 2], y + d[..., 3]],
        axis=-1,
    )
    if image_size is not None:
        w, h = image_size
        boxes[..., 0::2] = np.clip(boxes[..., 0::2], 0, w)
        boxes[..., 1::2] = np.clip(boxes[..., 1::2], 0, h)
    return boxes


def decode_box(anchor: AnchorPoint, d, z: float, image_size=None) -> np.ndarray:
    return decode_distances(anchor.x, anchor.y, anchor.stride, d, z, image_size)


def box_area(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return np.maximum(boxes[..., 2] - boxes[..., 0], 0) * np.maximum(boxes[..., 3] - boxes[..., 1], 0)


def iou(a, b) -> float:
    """IoU of two corner-form boxes; zero-area boxes give 0."""
    return float(pairwise_iou(np.asarray(a)[None], np.asarray(b)[None])[0, 0])


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(N, 4) x (M, 4) corner boxes -> (N, M) IoU matrix."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.maximum(ix2 - ix1, 0) * np.maximum(iy2 - iy1, 0)
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out
