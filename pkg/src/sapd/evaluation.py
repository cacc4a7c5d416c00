"""COCO-style mean average precision with 101-point interpolation."""

from __future__ import annotations

import numpy as np

from .geometry import GroundTruthBox, pairwise_iou

IOU_THRESHOLDS = np.round(np.arange(0.5, 0.951, 0.05), 2)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def _match_image(det_boxes, det_scores, gt_boxes, threshold):
    """TP flags for one image's detections (one class), greedy by score."""
    order = np.argsort(-det_scores, kind="stable")
    tp = np.zeros(len(det_scores), dtype=bool)
    if len(gt_boxes) == 0:
        return tp
    ious = pairwise_iou(det_boxes, gt_boxes)
    taken = np.zeros(len(gt_boxes), dtype=bool)
    for d in order:
        cand = np.where(taken, -1.0, ious[d])
        g = int(np.argmax(cand))
        if cand[g] >= threshold:
            taken[g] = True
            tp[d] = True
    return tp


def average_precision(tp: np.ndarray, scores: np.ndarray, num_gt: int) -> float:
    """101-point interpolated AP from pooled TP flags and scores."""
    if num_gt == 0:
        return float("nan")
    if tp.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="mergesort")
    tp = tp[order]
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / num_gt
    precision = tps / np.maximum(tps + fps, np.finfo(np.float64).eps)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < precision.size, precision[np.minimum(idx, precision.size - 1)], 0.0)
    return float(q.mean())


def evaluate(detections, ground_truth, num_classes: int | None = None) -> dict:
    """AP averaged over IoU thresholds .50:.95 and classes, plus AP50 and AP75.

    ``detections[i]`` is a list of objects with ``class_id``, ``score`` and
    corner ``box``; ``ground_truth[i]`` a list of :class:`GroundTruthBox` for
    the same image. Classes without ground truth are left out of the mean.
    """
    if len(detections) != len(ground_truth):
        raise ValueError("detections and ground truth cover different numbers of images")
    if num_classes is None:
        ids = [b.class_id for gts in ground_truth for b in gts] + [d.class_id for ds in detections for d in ds]
        num_classes = max(ids, default=0)

    per_threshold = np.full((len(IOU_THRESHOLDS), num_classes), np.nan)
    for c in range(1, num_classes + 1):
        gts = [np.array([b.corners() for b in g if b.class_id == c]).reshape(-1, 4) for g in ground_truth]
        num_gt = sum(len(g) for g in gts)
        if num_gt == 0:
            continue
        dets = [[d for d in ds if d.class_id == c] for ds in detections]
        boxes = [np.array([d.box for d in ds], dtype=np.float64).reshape(-1, 4) for ds in dets]
        scores = [np.array([d.score for d in ds], dtype=np.float64) for ds in dets]
        all_scores = np.concatenate(scores) if scores else np.zeros(0)
        for ti, thr in enumerate(IOU_THRESHOLDS):
            tp = [_match_image(b, s, g, thr) for b, s, g in zip(boxes, scores, gts)]
            flags = np.concatenate(tp) if tp else np.zeros(0, dtype=bool)
            per_threshold[ti, c - 1] = average_precision(flags, all_scores, num_gt)

    def mean(a):
        a = a[~np.isnan(a)]
        return float(a.mean()) if a.size else 0.0

    return {
        "AP": mean(per_threshold),
        "AP50": mean(per_threshold[0]),
        "AP75": mean(per_threshold[5]),
    }
