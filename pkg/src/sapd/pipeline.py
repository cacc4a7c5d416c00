"""Inference and evaluation over whole scene sets."""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .data import Scene
from .evaluation import evaluate
from .model import ToyDetector
from .postprocess import Detection, decode_detections


def infer(model: ToyDetector, images: np.ndarray, cfg: RunConfig, batch_size: int = 50) -> list[list[Detection]]:
    """Detections for each of the (N, 3, H, W) ``images``.

    The selection network plays no part here; scores are the raw sigmoid
    outputs with no test-time reweighting.
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    ic = cfg.infer
    results = []
    for s in range(0, len(images), batch_size):
        out, _ = model.forward(images[s : s + batch_size], keep_cache=False)
        for b in range(len(out["cls"][0])):
            results.append(
                decode_detections(
                    [c[b] for c in out["cls"]],
                    [d[b] for d in out["dist"]],
                    model.pyramid,
                    cfg.geometry.z,
                    ic.score_threshold,
                    ic.pre_nms_top,
                    ic.nms_threshold,
                )
            )
    return results


def evaluate_model(model: ToyDetector, scenes: list[Scene], cfg: RunConfig) -> dict:
    dets = infer(model, np.stack([s.image for s in scenes]), cfg)
    return evaluate(dets, [s.boxes for s in scenes], cfg.data.num_classes)
