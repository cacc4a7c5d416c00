"""Inspection dumps: per-instance level weights and per-level anchor weight maps."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import Scene
from .selection import soft_assign
from .targets import LevelTargets, build_targets

SELECTION_WEIGHTS_NAME = "selection_weights.csv"


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM (P5) from a 2-d uint8 array."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def weight_map_image(t: LevelTargets) -> np.ndarray:
    """Positive anchor weights scaled to 0..255; negatives are black."""
    w = np.where(t.positive, np.clip(t.weight, 0.0, 1.0), 0.0)
    return np.round(w * 255.0).astype(np.uint8)


def scene_targets(trainer, scenes: list[Scene], phase: int = 2):
    """Level losses, selection probabilities and targets the trainer would use.

    Returns ``(result, targets)`` where ``targets[b]`` is the per-level list of
    :class:`LevelTargets` for scene ``b``.
    """
    cfg = trainer.cfg
    result, _ = trainer.compute(scenes, phase, with_grads=False)
    soft = phase == 2 and trainer.uses_selection
    targets = []
    for b, scene in enumerate(scenes):
        losses = result.level_losses[b]
        probs = result.level_weights[b]
        assigns = []
        for k in range(len(scene.boxes)):
            if not np.isfinite(losses[k]).any():
                assigns.append([])
            elif soft:
                assigns.append(soft_assign(losses[k], probs[k], cfg.selection.top_k))
            else:
                assigns.append([(int(np.argmin(losses[k])), None)])
        targets.append(build_targets(scene.boxes, assigns, trainer.pyramid, cfg.weighting, cfg.geometry.z))
    return result, targets


def dump_weights(trainer, scenes: list[Scene], out_dir, batch_size: int = 16) -> Path:
    """Write the selection-weight CSV and one PGM per (scene, level) into ``out_dir``.

    CSV columns are ``image, instance, P<l>...``; instances the selection
    network did not score (no anchor on any level, or selection disabled)
    get empty cells.
    """
    out_dir = Path(out_dir)
    maps = out_dir / "weight_maps"
    maps.mkdir(parents=True, exist_ok=True)
    levels = trainer.pyramid.levels
    with open(out_dir / SELECTION_WEIGHTS_NAME, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image", "instance"] + [f"P{l}" for l in levels])
        for s in range(0, len(scenes), batch_size):
            chunk = scenes[s : s + batch_size]
            result, targets = scene_targets(trainer, chunk)
            for b, scene in enumerate(chunk):
                image_id = scene.name or f"{s + b:06d}"
                probs = result.level_weights[b]
                for k in range(len(scene.boxes)):
                    row = probs[k] if probs is not None else np.full(len(levels), np.nan)
                    writer.writerow([image_id, k] + ["" if np.isnan(p) else repr(float(p)) for p in row])
                stem = Path(image_id).stem
                for l, t in zip(levels, targets[b]):
                    write_pgm(maps / f"{stem}_P{l}.pgm", weight_map_image(t))
    return out_dir
