"""Instance-to-level assignment and the feature selection network.

Phase 1 of training assigns every instance to the single level with the
smallest instance-dependent loss. Phase 2 assigns it to the ``top_k`` cheapest
levels and weights each by the probability that the selection network gives
that level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .geometry import GroundTruthBox, PyramidSpec, contains, encode_distances, valid_box
from .losses import FocalConfig, focal_loss, iou_loss

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class SelectionConfig:
    top_k: int = 3
    lam: float = 0.1
    roi_size: int = 7
    sampling_ratio: int = 2
    width: int = 32
    couple_features: bool = False

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.roi_size < 7:
            raise ValueError(f"roi_size must be >= 7 for three unpadded 3x3 convs, got {self.roi_size}")


# ---------------------------------------------------------------------------
# instance-dependent level loss and assignment
# ---------------------------------------------------------------------------


def positive_cells(box: GroundTruthBox, pyramid: PyramidSpec, level: int, epsilon: float):
    """Row and column indices of the anchors inside the valid box at ``level``."""
    xs, ys = pyramid.anchor_centers(level)
    vb = valid_box(box, epsilon)
    cols = np.nonzero(contains(vb, xs, vb.cy))[0]
    rows = np.nonzero(contains(vb, vb.cx, ys))[0]
    jj, ii = np.meshgrid(rows, cols, indexing="ij")
    return jj.ravel(), ii.ravel()


def instance_level_loss(
    box: GroundTruthBox,
    level: int,
    cls_logits: np.ndarray,
    pred_d: np.ndarray,
    pyramid: PyramidSpec,
    epsilon: float = 0.2,
    z: float = 4.0,
    focal: FocalConfig = FocalConfig(),
) -> float:
    """Mean unweighted (focal + IoU) loss over the instance's valid-box anchors.

    ``cls_logits`` (H, W, K) and ``pred_d`` (H, W, 4) are one image's outputs at
    ``level``. Returns ``inf`` when the valid box holds no anchor.
    """
    jj, ii = positive_cells(box, pyramid, level, epsilon)
    if jj.size == 0:
        return float("inf")
    s = pyramid.stride(level)
    xs, ys = pyramid.anchor_centers(level)
    target_d = encode_distances(xs[ii], ys[jj], s, box, z)
    fl, _ = focal_loss(cls_logits[jj, ii], np.full(jj.size, box.class_id), focal)
    il, _ = iou_loss(pred_d[jj, ii], target_d)
    return float(np.mean(fl + il))


def hard_select(level_losses) -> int | None:
    """Index of the cheapest level (lowest index on ties); ``None`` if none is finite."""
    losses = np.asarray(level_losses, dtype=np.float64)
    if not np.isfinite(losses).any():
        log.info("instance has no anchors on any level; skipped")
        return None
    return int(np.argmin(losses))


def soft_assign(level_losses, level_weights, top_k: int) -> list[tuple[int, float]]:
    """The ``top_k`` cheapest finite levels paired with their soft weights.

    Weights are taken as-is from ``level_weights``; unselected levels are simply
    dropped, never renormalized.
    """
    losses = np.asarray(level_losses, dtype=np.float64)
    finite = np.nonzero(np.isfinite(losses))[0]
    order = finite[np.argsort(losses[finite], kind="stable")]
    return [(int(l), float(level_weights[l])) for l in order[:top_k]]


# ---------------------------------------------------------------------------
# RoIAlign
# ---------------------------------------------------------------------------


def _interp_matrix(start: float, length: float, size: int, roi_size: int, sampling_ratio: int) -> np.ndarray:
    """(roi_size * sampling_ratio, size) bilinear weights along one axis.

    Sample positions are in cell units with cell centers at ``index + 0.5``;
    they are clamped to the outermost cell centers.
    """
    n = roi_size * sampling_ratio
    pos = start + length * (np.arange(n) + 0.5) / n
    u = np.clip(pos - 0.5, 0.0, size - 1)
    lo = np.floor(u).astype(int)
    hi = np.minimum(lo + 1, size - 1)
    frac = u - lo
    m = np.zeros((n, size))
    np.add.at(m, (np.arange(n), lo), 1 - frac)
    np.add.at(m, (np.arange(n), hi), frac)
    return m


def roi_align(feature, box_xyxy, stride: int, roi_size: int = 7, sampling_ratio: int = 2):
    """Bilinear RoIAlign of one (H, W, C) map over an image-space corner box.

    Each of the ``roi_size``^2 bins averages ``sampling_ratio``^2 regularly
    spaced bilinear samples. Returns ``(out, mats)`` with ``out`` shaped
    (roi_size, roi_size, C); the row/column interpolation matrices let
    :func:`roi_align_backward` scatter gradients.
    """
    h, w, c = feature.shape
    x1, y1, x2, y2 = (float(v) / stride for v in box_xyxy)
    mx = _interp_matrix(x1, x2 - x1, w, roi_size, sampling_ratio)
    my = _interp_matrix(y1, y2 - y1, h, roi_size, sampling_ratio)
    # bin averaging folds into the interpolation matrices
    pool = np.kron(np.eye(roi_size), np.full((1, sampling_ratio), 1.0 / sampling_ratio))
    ay = (pool @ my).astype(feature.dtype)
    ax = (pool @ mx).astype(feature.dtype)
    rows = (ay @ feature.reshape(h, w * c)).reshape(roi_size, w, c)
    out = np.matmul(ax, rows)  # (R, R, C): broadcast over output rows
    return out, (ay, ax)


def roi_align_backward(dout, mats):
    ay, ax = mats
    r, _, c = dout.shape
    drows = np.matmul(ax.T, dout)  # (R, W, C)
    return (ay.T @ drows.reshape(r, -1)).reshape(ay.shape[1], ax.shape[1], c)


def extract_instance_features(features, box_xyxy, strides, roi_size=7, sampling_ratio=2):
    """RoIAlign every pyramid level and stack along channels.

    ``features`` is a list of (H, W, C) maps, one per level. Returns the
    (roi_size, roi_size, levels * C) block.
    """
    blocks = [roi_align(f, box_xyxy, s, roi_size, sampling_ratio)[0] for f, s in zip(features, strides)]
    return np.concatenate(blocks, axis=-1)


# ---------------------------------------------------------------------------
# feature selection network
# ---------------------------------------------------------------------------

SELECT_PARAM_NAMES = ("sel.conv1.w", "sel.conv1.b", "sel.conv2.w", "sel.conv2.b", "sel.conv3.w", "sel.conv3.b", "sel.fc.w", "sel.fc.b")


def init_select_net(in_channels: int, num_levels: int, cfg: SelectionConfig, seed: int, sigma: float = 0.01):
    """Gaussian-initialized parameters: three unpadded 3x3 convs and a linear layer."""
    w = cfg.width
    side = cfg.roi_size - 6
    shapes = {
        "sel.conv1.w": (3, 3, in_channels, w),
        "sel.conv2.w": (3, 3, w, w),
        "sel.conv3.w": (3, 3, w, w),
        "sel.fc.w": (num_levels, w * side * side),
    }
    params = {}
    for k, name in enumerate(SELECT_PARAM_NAMES):
        if name.endswith(".w"):
            params[name] = nx.gaussian_init(shapes[name], sigma, seed + k)
        else:
            params[name] = nx.bias_init(num_levels if name == "sel.fc.b" else w, 0.0)
    return params


def select_net_forward(params, x):
    """Level probabilities for a batch of (M, R, R, C) instance feature blocks."""
    cache = {"x": x}
    h = x
    for i in (1, 2, 3):
        pre, cols = nx.conv2d_forward(h, params[f"sel.conv{i}.w"], params[f"sel.conv{i}.b"])
        cache[f"in{i}"] = h.shape
        cache[f"cols{i}"] = cols
        h = nx.relu_forward(pre)
        cache[f"act{i}"] = h
    flat = h.reshape(h.shape[0], -1)
    cache["flat"] = flat
    logits = nx.linear_forward(flat, params["sel.fc.w"], params["sel.fc.b"])
    probs = nx.softmax(logits.astype(np.float64), axis=1)
    cache["probs"] = probs
    return probs, cache


def select_net_loss(probs, target_levels):
    """Mean cross entropy against the min-loss level of each instance.

    Returns the loss and its gradient with respect to the probabilities.
    """
    probs = np.asarray(probs, dtype=np.float64)
    target_levels = np.asarray(target_levels, dtype=int)
    m = probs.shape[0]
    picked = probs[np.arange(m), target_levels]
    loss = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
    dprobs = np.zeros_like(probs)
    dprobs[np.arange(m), target_levels] = -1.0 / (m * np.maximum(picked, PROB_FLOOR))
    return loss, dprobs


def select_net_backward(params, cache, dprobs, need_dx=False):
    """Parameter gradients (and optionally input gradient) from d loss / d probs."""
    grads = {}
    dlogits = nx.softmax_backward(dprobs, cache["probs"], axis=1)
    dlogits = dlogits.astype(params["sel.fc.w"].dtype)
    dflat, grads["sel.fc.w"], grads["sel.fc.b"] = nx.linear_backward(dlogits, cache["flat"], params["sel.fc.w"])
    dh = dflat.reshape(cache["act3"].shape)
    for i in (3, 2, 1):
        dpre = nx.relu_backward(dh, cache[f"act{i}"])
        dh, grads[f"sel.conv{i}.w"], grads[f"sel.conv{i}.b"] = nx.conv2d_backward(
            dpre, cache[f"in{i}"], params[f"sel.conv{i}.w"], cache[f"cols{i}"], need_dx=(i > 1 or need_dx)
        )
    return grads, dh
