"""Inference decoding and non-maximum suppression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PyramidSpec, decode_distances
from .numerics import sigmoid


@dataclass
class Detection:
    class_id: int
    score: float
    box: np.ndarray  # (x1, y1, x2, y2)
    level: int


def nms(boxes: np.ndarray, scores: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Greedy NMS; returns kept indices in descending-score order.

    Equal scores keep their input order. A box is suppressed when its IoU with
    an already kept box exceeds ``threshold``.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if boxes.size == 0:
        return np.zeros(0, dtype=np.int64)
    x1, y1, x2, y2 = boxes.T
    areas = np.maximum(x2 - x1, 0) * np.maximum(y2 - y1, 0)
    order = np.argsort(-scores, kind="stable")
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.maximum(np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]), 0)
        ih = np.maximum(np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]), 0)
        inter = iw * ih
        union = areas[i] + areas[rest] - inter
        ovr = np.zeros_like(inter)
        np.divide(inter, union, out=ovr, where=union > 0)
        order = rest[ovr <= threshold]
    return np.asarray(keep, dtype=np.int64)


def batched_nms(boxes, scores, classes, threshold=0.5) -> np.ndarray:
    """Class-wise NMS; kept indices sorted by descending score."""
    classes = np.asarray(classes)
    keep = [np.nonzero(classes == c)[0][nms(boxes[classes == c], scores[classes == c], threshold)] for c in np.unique(classes)]
    if not keep:
        return np.zeros(0, dtype=np.int64)
    keep = np.concatenate(keep)
    return keep[np.argsort(-np.asarray(scores)[keep], kind="stable")]


def decode_detections(
    cls_logits: list[np.ndarray],
    distances: list[np.ndarray],
    pyramid: PyramidSpec,
    z: float = 4.0,
    score_threshold: float = 0.05,
    pre_nms_top: int = 1000,
    nms_threshold: float = 0.5,
) -> list[Detection]:
    """Detections for one image from per-level (h, w, K) logits and (h, w, 4) distances.

    Per level: sigmoid scores, threshold, keep the top ``pre_nms_top``
    anchor/class pairs, decode. Levels are merged and class-wise NMS applied.
    """
    all_boxes, all_scores, all_cls, all_lvl = [], [], [], []
    size = (pyramid.image_width, pyramid.image_height)
    for level, logits, dist in zip(pyramid.levels, cls_logits, distances):
        h, w, k = logits.shape
        scores = sigmoid(logits.astype(np.float64)).reshape(-1, k)
        anchor_idx, cls_idx = np.nonzero(scores > score_threshold)
        if anchor_idx.size == 0:
            continue
        s = scores[anchor_idx, cls_idx]
        if s.size > pre_nms_top:
            top = np.argsort(-s, kind="stable")[:pre_nms_top]
            anchor_idx, cls_idx, s = anchor_idx[top], cls_idx[top], s[top]
        xs, ys = pyramid.anchor_centers(level)
        rows, cols = np.divmod(anchor_idx, w)
        d = dist.reshape(-1, 4)[anchor_idx]
        all_boxes.append(decode_distances(xs[cols], ys[rows], pyramid.stride(level), d, z, size))
        all_scores.append(s)
        all_cls.append(cls_idx + 1)
        all_lvl.append(np.full(s.size, level))
    if not all_boxes:
        return []
    boxes = np.concatenate(all_boxes)
    scores = np.concatenate(all_scores)
    classes = np.concatenate(all_cls)
    levels = np.concatenate(all_lvl)
    keep = batched_nms(boxes, scores, classes, nms_threshold)
    return [Detection(int(classes[i]), float(scores[i]), boxes[i], int(levels[i])) for i in keep]
