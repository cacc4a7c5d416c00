"""Toy anchor-point detector: strided conv backbone, feature pyramid, shared heads.

Topology for pyramid levels ``min_level..max_level``::

    image -> down1 -> ... -> down_max          (3x3 stride-2 conv + relu each;
                                                levels >= 2 add a stride-1 conv)
    C_l  -> lateral 1x1 -> + upsample(P_{l+1}) -> 3x3 smooth -> P_l
    P_l  -> cls subnet (n x [3x3 conv + relu]) -> 3x3 conv -> K logits
    P_l  -> loc subnet (n x [3x3 conv + relu]) -> 3x3 conv -> exp -> 4 distances

Heads share weights across levels. Backward is written out by hand for this
fixed topology.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .geometry import PyramidSpec

LOC_CLAMP = 8.0


@dataclass(frozen=True)
class ModelConfig:
    width: int = 32
    stem_width: int = 16
    head_convs: int = 2
    head_sigma: float = 0.01
    prior: float = 0.01
    loc_bias: float = 0.1
    head_hidden_he: bool = True


class ToyDetector:
    def __init__(self, cfg: ModelConfig, pyramid: PyramidSpec, num_classes: int, seed: int = 0):
        self.cfg = cfg
        self.pyramid = pyramid
        self.num_classes = num_classes
        self.params: dict[str, np.ndarray] = {}
        self._seed = seed
        self._build()

    # -- parameters ---------------------------------------------------------

    def _conv(self, name, cin, cout, k, sigma=None, bias=0.0):
        seed = self._seed * 1000 + len(self.params)
        if sigma is None:
            sigma = float(np.sqrt(2.0 / (cin * k * k)))
        self.params[name + ".w"] = nx.gaussian_init((k, k, cin, cout), sigma, seed)
        self.params[name + ".b"] = nx.bias_init(cout, bias)

    def _build(self):
        cfg = self.cfg
        cin = 3
        self.down_channels = {}
        for s in range(1, self.pyramid.max_level + 1):
            cout = cfg.stem_width if s == 1 else cfg.width
            self._conv(f"down{s}", cin, cout, 3)
            if s >= 2:
                self._conv(f"extra{s}", cout, cout, 3)
            self.down_channels[s] = cout
            cin = cout
        for l in self.pyramid.levels:
            self._conv(f"lat{l}", self.down_channels[l], cfg.width, 1)
            self._conv(f"smooth{l}", cfg.width, cfg.width, 3)
        for head in ("cls", "loc"):
            for i in range(cfg.head_convs):
                self._conv(f"{head}{i}", cfg.width, cfg.width, 3, sigma=None if cfg.head_hidden_he else cfg.head_sigma)
        self._conv("cls_out", cfg.width, self.num_classes, 3, sigma=cfg.head_sigma, bias=nx.prior_bias(cfg.prior))
        self._conv("loc_out", cfg.width, 4, 3, sigma=cfg.head_sigma, bias=cfg.loc_bias)

    def parameter_names(self) -> list[str]:
        return list(self.params)

    # -- forward ------------------------------------------------------------

    def _fwd_conv(self, name, x, stride=1, padding=1, cache=None):
        y, cols = nx.conv2d_forward(x, self.params[name + ".w"], self.params[name + ".b"], stride, padding)
        if cache is not None:
            cache.append((name, x.shape, cols, stride, padding))
        return y

    def forward(self, images: np.ndarray, keep_cache: bool = True):
        """Run the detector on (B, 3, H, W) images.

        Returns ``out`` with per-level NHWC lists ``cls`` (B, h, w, K) logits,
        ``dist`` (B, h, w, 4) positive distances and ``features`` (B, h, w, C)
        pyramid maps, plus an opaque cache for :meth:`backward`.
        """
        x = np.ascontiguousarray(images.transpose(0, 2, 3, 1), dtype=self.params["down1.w"].dtype)
        tape = [] if keep_cache else None
        c = {}
        acts = {}
        for s in range(1, self.pyramid.max_level + 1):
            x = nx.relu_forward(self._fwd_conv(f"down{s}", x, stride=2, cache=tape))
            acts[f"down{s}"] = x
            if s >= 2:
                x = nx.relu_forward(self._fwd_conv(f"extra{s}", x, cache=tape))
                acts[f"extra{s}"] = x
            c[s] = x

        levels = self.pyramid.levels
        merged = {}
        top = None
        for l in reversed(levels):
            m = self._fwd_conv(f"lat{l}", c[l], padding=0, cache=tape)
            if top is not None:
                m = m + nx.upsample2x_forward(top)
            merged[l] = m
            top = m
        feats = [self._fwd_conv(f"smooth{l}", merged[l], cache=tape) for l in levels]

        cls_out, dist_out, head_tapes = [], [], []
        for p in feats:
            htape = [] if keep_cache else None
            hacts = {}
            for head in ("cls", "loc"):
                h = p
                for i in range(self.cfg.head_convs):
                    h = nx.relu_forward(self._fwd_conv(f"{head}{i}", h, cache=htape))
                    hacts[f"{head}{i}"] = h
                if head == "cls":
                    cls_out.append(self._fwd_conv("cls_out", h, cache=htape))
                else:
                    raw = self._fwd_conv("loc_out", h, cache=htape)
                    d = np.exp(np.clip(raw, -LOC_CLAMP, LOC_CLAMP))
                    hacts["raw"] = raw
                    dist_out.append(d)
            head_tapes.append((htape, hacts))
        out = {"cls": cls_out, "dist": dist_out, "features": feats}
        cache = {"tape": tape, "acts": acts, "heads": head_tapes} if keep_cache else None
        return out, cache

    # -- backward -----------------------------------------------------------

    def backward(self, dcls, ddist, cache, dfeatures=None):
        """Parameter gradients given d loss / d logits and d loss / d distances.

        ``dcls``/``ddist`` are per-level lists shaped like the forward outputs;
        ``dfeatures`` optionally adds gradients arriving at the pyramid maps.
        """
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        records = {}
        dtype = self.params["down1.w"].dtype

        def bwd(rec, dy, need_dx=True):
            name, xshape, cols, stride, padding = rec
            dx, dw, db = nx.conv2d_backward(
                dy, xshape, self.params[name + ".w"], cols, stride, padding, need_dx=need_dx
            )
            grads[name + ".w"] += dw
            grads[name + ".b"] += db
            return dx

        levels = self.pyramid.levels
        dfeats = []
        for li, (htape, hacts) in enumerate(cache["heads"]):
            recs = {r[0]: r for r in htape}
            dp = None
            for head in ("cls", "loc"):
                if head == "cls":
                    dy = dcls[li].astype(dtype, copy=False)
                    dh = bwd(recs["cls_out"], dy)
                else:
                    raw = hacts["raw"]
                    inside = np.abs(raw) < LOC_CLAMP
                    dy = (ddist[li] * np.exp(np.clip(raw, -LOC_CLAMP, LOC_CLAMP)) * inside).astype(dtype)
                    dh = bwd(recs["loc_out"], dy)
                for i in reversed(range(self.cfg.head_convs)):
                    dh = nx.relu_backward(dh, hacts[f"{head}{i}"])
                    dh = bwd(recs[f"{head}{i}"], dh)
                dp = dh if dp is None else dp + dh
            if dfeatures is not None and dfeatures[li] is not None:
                dp = dp + dfeatures[li]
            dfeats.append(dp)

        for rec in cache["tape"]:
            records[rec[0]] = rec
        dmerged = {l: bwd(records[f"smooth{l}"], dfeats[i]) for i, l in enumerate(levels)}
        # merged_l = lat_l + up(merged_{l+1}): push gradients upward from the finest level
        for l in levels[1:]:
            dmerged[l] = dmerged[l] + nx.upsample2x_backward(dmerged[l - 1])
        dc = {l: bwd(records[f"lat{l}"], dmerged[l]) for l in levels}

        acts = cache["acts"]
        dx = None
        for s in range(self.pyramid.max_level, 0, -1):
            if s in dc:
                dx = dc[s] if dx is None else dx + dc[s]
            if s >= 2:
                dx = bwd(records[f"extra{s}"], nx.relu_backward(dx, acts[f"extra{s}"]))
            dx = bwd(records[f"down{s}"], nx.relu_backward(dx, acts[f"down{s}"]), need_dx=s > 1)
        return grads
