"""Two-phase training of the toy detector and its feature selection network."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .config import RunConfig
from .data import Scene, flip_horizontal, generate_scenes
from .losses import LossBreakdown, focal_loss, iou_loss, loss_gradient_scales, total_loss
from .model import ToyDetector
from .selection import (
    extract_instance_features,
    hard_select,
    init_select_net,
    instance_level_loss,
    roi_align,
    roi_align_backward,
    select_net_backward,
    select_net_forward,
    select_net_loss,
    soft_assign,
)
from .targets import build_targets

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("iter", "total", "cls", "loc", "select", "pos_weight_sum", "phase", "lr")
CHECKPOINT_NAME = "checkpoint.sapd"
METRICS_NAME = "metrics.csv"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class StepOutput:
    breakdown: LossBreakdown
    level_losses: list[np.ndarray] = field(default_factory=list)
    level_weights: list[np.ndarray | None] = field(default_factory=list)


class Schedule:
    """Iteration-indexed learning rate and phase for a :class:`TrainConfig`."""

    def __init__(self, tc, num_scenes: int):
        self.iters_per_epoch = math.ceil(num_scenes / tc.batch_size)
        self.total_iters = self.iters_per_epoch * tc.epochs
        self.switch_epoch = int(tc.phase_switch * tc.epochs + 0.5)
        self.drops = [int(round(f * self.total_iters)) for f in tc.lr_drops]
        self.base_lr = tc.lr
        self.warmup = tc.warmup_iters

    def epoch(self, it: int) -> int:
        return it // self.iters_per_epoch

    def phase(self, it: int) -> int:
        return 1 if self.epoch(it) < self.switch_epoch else 2

    def lr(self, it: int) -> float:
        lr = self.base_lr * 0.1 ** sum(it >= d for d in self.drops)
        if it < self.warmup:
            lr *= (1.0 + 2.0 * it / self.warmup) / 3.0
        return lr


class Trainer:
    def __init__(self, cfg: RunConfig, seed: int | None = None):
        self.cfg = cfg
        self.seed = cfg.train.seed if seed is None else seed
        self.pyramid = cfg.pyramid
        self.model = ToyDetector(cfg.model, self.pyramid, cfg.data.num_classes, self.seed)
        n = self.pyramid.num_levels
        self.select_params = init_select_net(n * cfg.model.width, n, cfg.selection, seed=self.seed * 1000 + 900)
        self.params = {**self.model.params, **self.select_params}
        self.optimizer = nx.SGD(self.params, cfg.train.momentum, cfg.train.weight_decay)

    @property
    def uses_selection(self) -> bool:
        return self.cfg.train.soft_select

    # -- one iteration ------------------------------------------------------

    def compute(self, scenes: list[Scene], phase: int, with_grads: bool = True):
        """Forward, assignment, loss and (optionally) gradients for a batch."""
        cfg = self.cfg
        pyr = self.pyramid
        levels = pyr.levels
        images = np.stack([s.image for s in scenes])
        out, cache = self.model.forward(images, keep_cache=with_grads)

        # instance-dependent loss of every instance on every level
        level_losses = []
        for b, scene in enumerate(scenes):
            per = np.array(
                [
                    [
                        instance_level_loss(
                            box, l, out["cls"][li][b], out["dist"][li][b], pyr,
                            cfg.weighting.epsilon, cfg.geometry.z, cfg.focal,
                        )
                        for li, l in enumerate(levels)
                    ]
                    for box in scene.boxes
                ]
            ).reshape(len(scene.boxes), len(levels))
            level_losses.append(per)
        hard = [[hard_select(row) for row in per] for per in level_losses]

        # selection network on level-concatenated RoI features
        sel_loss = 0.0
        sel_grads = {}
        dfeatures = None
        probs_per_scene: list[np.ndarray | None] = [None] * len(scenes)
        if self.uses_selection:
            index = [(b, k) for b in range(len(scenes)) for k in range(len(scenes[b].boxes)) if hard[b][k] is not None]
            if index:
                strides = [pyr.stride(l) for l in levels]
                blocks, mats = [], []
                for b, k in index:
                    corners = scenes[b].boxes[k].corners()
                    feats = [f[b] for f in out["features"]]
                    blocks.append(extract_instance_features(feats, corners, strides, cfg.selection.roi_size, cfg.selection.sampling_ratio))
                    mats.append(corners)
                x = np.stack(blocks).astype(nx.DTYPE)
                probs, scache = select_net_forward(self.select_params, x)
                targets = [hard[b][k] for b, k in index]
                sel_loss, dprobs = select_net_loss(probs, targets)
                if with_grads:
                    couple = cfg.selection.couple_features
                    sel_grads, dx = select_net_backward(self.select_params, scache, cfg.selection.lam * dprobs, need_dx=couple)
                    if couple:
                        dfeatures = self._roi_backward(dx, index, mats, out["features"], strides)
                for m, (b, k) in enumerate(index):
                    if probs_per_scene[b] is None:
                        probs_per_scene[b] = np.full((len(scenes[b].boxes), len(levels)), np.nan)
                    probs_per_scene[b][k] = probs[m]

        # assignment and targets
        soft = phase == 2 and self.uses_selection
        per_level = [[] for _ in levels]
        for b, scene in enumerate(scenes):
            assigns = []
            for k in range(len(scene.boxes)):
                if hard[b][k] is None:
                    assigns.append([])
                elif soft:
                    assigns.append(soft_assign(level_losses[b][k], probs_per_scene[b][k], cfg.selection.top_k))
                else:
                    assigns.append([(hard[b][k], None)])
            for li, t in enumerate(build_targets(scene.boxes, assigns, pyr, cfg.weighting, cfg.geometry.z)):
                per_level[li].append(t)

        # losses over all anchors, flattened level by level in (b, row, col) order
        logits, cls_t, pos, weights, pred_d, loc_t = [], [], [], [], [], []
        for li in range(len(levels)):
            logits.append(out["cls"][li].reshape(-1, out["cls"][li].shape[-1]))
            pred_d.append(out["dist"][li].reshape(-1, 4))
            cls_t.append(np.concatenate([t.cls.ravel() for t in per_level[li]]))
            pos.append(np.concatenate([t.positive.ravel() for t in per_level[li]]))
            weights.append(np.concatenate([t.weight.ravel() for t in per_level[li]]))
            loc_t.append(np.concatenate([t.loc.reshape(-1, 4) for t in per_level[li]]))
        sizes = [a.shape[0] for a in logits]
        logits = np.concatenate(logits)
        pred_d = np.concatenate(pred_d)
        cls_t = np.concatenate(cls_t)
        pos = np.concatenate(pos)
        weights = np.concatenate(weights)
        loc_t = np.concatenate(loc_t)

        fl, gfl = focal_loss(logits, cls_t, cfg.focal)
        il = np.zeros(len(fl))
        gil = np.zeros((len(fl), 4))
        if pos.any():
            il[pos], gil[pos] = iou_loss(pred_d[pos], loc_t[pos])
        lam = cfg.selection.lam if self.uses_selection else 0.0
        breakdown = total_loss(fl, il, pos, weights, sel_loss, lam, cfg.weighting.mode)
        result = StepOutput(breakdown, level_losses, probs_per_scene)
        if not with_grads:
            return result, None

        sc, sl = loss_gradient_scales(pos, weights, cfg.weighting.mode)
        dlogits = gfl * sc[:, None]
        ddist = gil * sl[:, None]
        dcls_levels, ddist_levels = [], []
        start = 0
        for li, n in enumerate(sizes):
            bsz, h, w, kk = out["cls"][li].shape
            dcls_levels.append(dlogits[start : start + n].reshape(bsz, h, w, kk))
            ddist_levels.append(ddist[start : start + n].reshape(bsz, h, w, 4))
            start += n
        grads = self.model.backward(dcls_levels, ddist_levels, cache, dfeatures)
        grads.update(sel_grads)
        return result, grads

    def _roi_backward(self, dx, index, corners, features, strides):
        n_lv = len(features)
        c = features[0].shape[-1]
        dfeat = [np.zeros_like(f) for f in features]
        for m, (b, _) in enumerate(index):
            for li in range(n_lv):
                _, mats = roi_align(features[li][b], corners[m], strides[li], self.cfg.selection.roi_size, self.cfg.selection.sampling_ratio)
                dfeat[li][b] += roi_align_backward(dx[m, :, :, li * c : (li + 1) * c], mats)
        return dfeat

    def step(self, scenes, phase: int, lr: float) -> StepOutput:
        result, grads = self.compute(scenes, phase)
        nx.clip_grad_norm(grads, self.cfg.train.grad_clip)
        self.optimizer.step(grads, lr)
        return result

    # -- checkpoints --------------------------------------------------------

    def save(self, path) -> None:
        nx.save_tensors(path, self.params.values())

    def load(self, path) -> None:
        tensors = nx.load_tensors(path)
        if len(tensors) != len(self.params):
            raise ValueError(f"checkpoint has {len(tensors)} tensors, model expects {len(self.params)}")
        for (name, p), t in zip(self.params.items(), tensors):
            if p.shape != t.shape:
                raise ValueError(f"checkpoint tensor {name} has shape {t.shape}, expected {p.shape}")
            p[...] = t


def batches(num: int, batch_size: int, epochs: int, rng: np.random.Generator):
    for _ in range(epochs):
        order = rng.permutation(num)
        for s in range(0, num, batch_size):
            yield order[s : s + batch_size]


def train(cfg: RunConfig, scenes: list[Scene] | None = None, out_dir=None, seed: int | None = None):
    """Train from scratch; returns the trainer and the per-iteration metric rows.

    With ``out_dir`` the metrics CSV and the final checkpoint are written there.
    """
    tc = cfg.train
    if scenes is None:
        scenes = generate_scenes(tc.train_count, tc.data_seed, cfg.data)
    trainer = Trainer(cfg, seed)
    rng = np.random.default_rng([trainer.seed, 12345])
    sched = Schedule(tc, len(scenes))
    rows = []
    initial = None
    for it, idx in enumerate(batches(len(scenes), tc.batch_size, tc.epochs, rng)):
        batch = [scenes[i] for i in idx]
        if tc.flip:
            flips = rng.random(len(batch)) < 0.5
            batch = [flip_horizontal(s) if f else s for s, f in zip(batch, flips)]
        phase, lr = sched.phase(it), sched.lr(it)
        res = trainer.step(batch, phase, lr)
        bd = res.breakdown
        if not np.isfinite(bd.total):
            raise TrainingDiverged(f"non-finite loss at iteration {it}")
        if initial is None:
            initial = bd.total
        elif bd.total > tc.divergence_factor * initial:
            raise TrainingDiverged(f"loss {bd.total:.4g} exceeds {tc.divergence_factor:g}x initial {initial:.4g} at iteration {it}")
        denom = bd.positive_weight_sum if bd.num_positives else 1.0
        rows.append(
            {
                "iter": it,
                "total": bd.total,
                "cls": bd.cls_sum / denom,
                "loc": bd.loc_sum / denom,
                "select": bd.select_net,
                "pos_weight_sum": bd.positive_weight_sum,
                "phase": phase,
                "lr": lr,
            }
        )
        if it % 100 == 0:
            log.info("iter %d phase %d lr %.4g loss %.4f", it, phase, lr, bd.total)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics(out_dir / METRICS_NAME, rows)
        trainer.save(out_dir / CHECKPOINT_NAME)
    return trainer, rows


def write_metrics(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in METRIC_COLUMNS])
