"""Focal loss, IoU loss and the weighted detection objective, with gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .weighting import split_by_mode

LOG_FLOOR = 1e-12
IOU_FLOOR = 1e-8


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0


@dataclass
class LossBreakdown:
    total: float
    cls_sum: float
    loc_sum: float
    select_net: float
    positive_weight_sum: float
    num_positives: int
    no_positives: bool = False


def _log_sigmoid(x):
    # log(sigmoid(x)) without overflow
    return -np.logaddexp(0, -x)


def focal_loss(logits, targets, cfg: FocalConfig = FocalConfig()):
    """Sigmoid focal loss summed over classes.

    Parameters
    ----------
    logits : (N, K) array
    targets : (N,) int array in [0, K]; 0 is background, c >= 1 marks class c.

    Returns
    -------
    loss : (N,) float64 per-anchor loss
    grad : (N, K) gradient of each row's loss with respect to its logits
    """
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim == 1:
        loss, grad = focal_loss(x[None], np.atleast_1d(targets), cfg)
        return loss[0], grad[0]
    t = np.asarray(targets)
    n, k = x.shape
    onehot = np.zeros((n, k), dtype=bool)
    pos = t > 0
    onehot[np.nonzero(pos)[0], t[pos] - 1] = True

    p = np.exp(_log_sigmoid(x))
    logp = np.maximum(_log_sigmoid(x), np.log(LOG_FLOOR))
    log1mp = np.maximum(_log_sigmoid(-x), np.log(LOG_FLOOR))
    a, g = cfg.alpha, cfg.gamma
    q = 1.0 - p

    pos_term = -a * q**g * logp
    neg_term = -(1 - a) * p**g * log1mp
    loss = np.where(onehot, pos_term, neg_term).sum(axis=1)

    pos_grad = a * q**g * (g * p * logp - q)
    neg_grad = (1 - a) * p**g * (p - g * q * log1mp)
    grad = np.where(onehot, pos_grad, neg_grad)
    return loss, grad


def iou_loss(pred, target):
    """``-ln IoU`` between anchor-relative boxes given as (l, t, r, b) distances.

    Both inputs are (N, 4) with positive entries (a single 4-vector also works).
    Returns the (N,) loss and its (N, 4) gradient with respect to ``pred``.
    """
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim == 1:
        loss, grad = iou_loss(p[None], np.asarray(target)[None])
        return loss[0], grad[0]
    t = np.asarray(target, dtype=np.float64)
    pl, pt, pr, pb = p.T
    tl, tt, tr, tb = t.T
    area_p = (pl + pr) * (pt + pb)
    area_t = (tl + tr) * (tt + tb)
    iw = np.minimum(pl, tl) + np.minimum(pr, tr)
    ih = np.minimum(pt, tt) + np.minimum(pb, tb)
    inter = iw * ih
    union = area_p + area_t - inter
    ratio = inter / union
    loss = -np.log(np.maximum(ratio, IOU_FLOOR))

    # d(-ln I/U) = -dI/I + dU/U with dU = dA_p - dI
    d_inter = np.stack([ih * (pl <= tl), iw * (pt <= tt), ih * (pr <= tr), iw * (pb <= tb)], axis=1)
    d_area = np.stack([pt + pb, pl + pr, pt + pb, pl + pr], axis=1)
    grad = -d_inter / inter[:, None] + (d_area - d_inter) / union[:, None]
    grad[ratio < IOU_FLOOR] = 0.0
    return loss, grad


def per_anchor_loss(logits, target_class, pred_d=None, target_d=None, cfg: FocalConfig = FocalConfig()):
    """Loss of a single anchor: focal term, plus IoU term when it is positive.

    Returns ``(total, focal, iou)``.
    """
    fl, _ = focal_loss(np.asarray(logits, dtype=np.float64), target_class, cfg)
    if target_class > 0:
        if pred_d is None or target_d is None:
            raise ValueError("positive anchors need predicted and target distances")
        il, _ = iou_loss(pred_d, target_d)
    else:
        il = 0.0
    return float(fl + il), float(fl), float(il)


def _positive_weight(positive, weights, mode):
    # with weighting off every positive counts once, whatever weights were passed
    if mode == "off":
        return float(positive.sum())
    return float(np.sum(weights[positive]))


def total_loss(cls_losses, loc_losses, positive, weights, select_net_loss=0.0, lam=0.1, mode="both"):
    """Weighted detection loss normalized by the total positive weight.

    ``cls_losses``/``loc_losses``/``positive``/``weights`` are flat per-anchor
    arrays; ``loc_losses`` must be zero on negatives. Negatives enter the
    numerator with their (unit) weight but never the denominator. With no
    positives the denominator is 1.
    """
    cls_losses = np.asarray(cls_losses, dtype=np.float64).ravel()
    loc_losses = np.asarray(loc_losses, dtype=np.float64).ravel()
    positive = np.asarray(positive, dtype=bool).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    wc, wl = split_by_mode(np.where(positive, weights, 1.0), mode)
    wl = np.where(positive, wl, 0.0)

    num_pos = int(positive.sum())
    pos_w = _positive_weight(positive, weights, mode)
    denom = pos_w if num_pos else 1.0
    detection = float(np.sum(wc * cls_losses + wl * loc_losses)) / denom
    return LossBreakdown(
        total=detection + lam * float(select_net_loss),
        cls_sum=float(np.sum(wc * cls_losses)),
        loc_sum=float(np.sum(wl * loc_losses)),
        select_net=float(select_net_loss),
        positive_weight_sum=pos_w,
        num_positives=num_pos,
        no_positives=num_pos == 0,
    )


def loss_gradient_scales(positive, weights, mode="both"):
    """Per-anchor multipliers d(total)/d(cls_loss_i) and d(total)/d(loc_loss_i)."""
    positive = np.asarray(positive, dtype=bool).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    wc, wl = split_by_mode(np.where(positive, weights, 1.0), mode)
    denom = _positive_weight(positive, weights, mode) if positive.any() else 1.0
    return wc / denom, np.where(positive, wl, 0.0) / denom
