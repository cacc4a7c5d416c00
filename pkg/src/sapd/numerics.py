"""Small deterministic numerics layer.

Every layer is a pair of plain functions: a forward that returns its output
(plus whatever the backward needs) and a hand-derived backward. Feature maps
are NHWC and conv kernels HWIO, row-major, float32 unless the caller hands in
float64 (gradient checks do, so the finite-difference oracle is not swamped
by rounding).
"""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

DTYPE = np.float32

# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _check_conv_shapes(x: np.ndarray, w: np.ndarray) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[3]} channels, kernel expects {w.shape[2]}"
        )


def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d_forward(x, w, b=None, stride=1, padding=0):
    """Cross-correlate NHWC ``x`` with an HWIO kernel ``w`` (kh, kw, C, O).

    Returns ``(y, cols)``; ``cols`` is the unfolded input (one row per output
    pixel, columns ordered kh, kw, C) that :func:`conv2d_backward` reuses.
    """
    _check_conv_shapes(x, w)
    kh, kw, c, o = w.shape
    n, h, wd, _ = x.shape
    ho, wo = _out_size(h, kh, stride, padding), _out_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d kernel {kh}x{kw} larger than padded input {h}x{wd}")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    if kh == kw == 1 and stride == 1:
        cols = x.reshape(n * ho * wo, c)
    else:
        cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
        for a in range(kh):
            for bb in range(kw):
                cols[:, :, :, a, bb, :] = x[:, a : a + stride * ho : stride, bb : bb + stride * wo : stride, :]
        cols = cols.reshape(n * ho * wo, kh * kw * c)
    y = cols @ w.reshape(kh * kw * c, o)
    if b is not None:
        y += b
    return y.reshape(n, ho, wo, o), cols


def conv2d_backward(dy, x_shape, w, cols, stride=1, padding=0, need_dx=True):
    """Gradients of :func:`conv2d_forward` with respect to input, kernel and bias."""
    kh, kw, c, o = w.shape
    n, h, wd, _ = x_shape
    _, ho, wo, _ = dy.shape
    dy_mat = dy.reshape(n * ho * wo, o)
    wmat = w.reshape(kh * kw * c, o)
    dw = (cols.T @ dy_mat).reshape(w.shape)
    db = dy_mat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = dy_mat @ wmat.T
    if kh == kw == 1 and stride == 1 and not padding:
        return dcols.reshape(x_shape), dw, db
    dcols = dcols.reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros((n, h + 2 * padding, wd + 2 * padding, c), dtype=dy.dtype)
    for a in range(kh):
        for bb in range(kw):
            dxp[:, a : a + stride * ho : stride, bb : bb + stride * wo : stride, :] += dcols[:, :, :, a, bb, :]
    if padding:
        dxp = dxp[:, padding:-padding, padding:-padding, :]
    return dxp, dw, db


# ---------------------------------------------------------------------------
# pointwise / dense layers
# ---------------------------------------------------------------------------


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dy, y):
    return dy * (y > 0)


def linear_forward(x, w, b=None):
    """``x`` (N, I), ``w`` (O, I) -> (N, O)."""
    y = x @ w.T
    if b is not None:
        y = y + b
    return y


def linear_backward(dy, x, w):
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dp, p, axis=-1):
    """Vector-Jacobian product of softmax given its output ``p``."""
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def upsample2x_forward(x):
    """Nearest-neighbour 2x upsampling of an NHWC tensor."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2x_backward(dy):
    n, h, w, c = dy.shape
    return dy.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of the SplitMix64 generator seeded with ``seed``."""
    state = np.uint64(seed % 2**64)
    with np.errstate(over="ignore"):
        z = state + _GOLDEN * np.arange(1, count + 1, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return z


def uniform01(seed: int, count: int) -> np.ndarray:
    """Doubles in [0, 1) from the top 53 bits of SplitMix64."""
    return (splitmix64(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def gaussian_init(shape, sigma: float, seed: int) -> np.ndarray:
    """N(0, sigma^2) tensor: SplitMix64 uniforms fed through Box-Muller.

    Pairs (u1, u2) produce (r cos t, r sin t) with r = sqrt(-2 ln(1 - u1)),
    t = 2 pi u2, filling the tensor in row-major order.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    size = int(np.prod(shape, dtype=np.int64))
    pairs = (size + 1) // 2
    u = uniform01(seed, 2 * pairs).reshape(pairs, 2)
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    t = 2.0 * np.pi * u[:, 1]
    z = np.stack([r * np.cos(t), r * np.sin(t)], axis=1).reshape(-1)[:size]
    return (sigma * z).reshape(shape).astype(DTYPE)


def bias_init(shape, value: float) -> np.ndarray:
    return np.full(shape, value, dtype=DTYPE)


def prior_bias(pi: float = 0.01) -> float:
    """Classification bias that makes the initial sigmoid output equal ``pi``."""
    return -float(np.log((1.0 - pi) / pi))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class SGD:
    """SGD with momentum and L2 weight decay.

    The velocity accumulates raw gradients (``v <- mu v + g + wd theta``) and the
    step is ``theta <- theta - lr v``, so a zero learning rate never moves the
    parameters whatever the momentum state.
    """

    def __init__(self, params: dict[str, np.ndarray], momentum=0.9, weight_decay=1e-4):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += g + self.weight_decay * p
            if lr:
                p -= np.asarray(lr, dtype=p.dtype) * v


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping; ``max_norm <= 0`` leaves the gradients alone.
    """
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= np.asarray(scale, dtype=g.dtype)
    return norm


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (evaluated in float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

MAGIC = b"SAPDTNSR"
VERSION = 1


def write_tensor(fh, array: np.ndarray) -> None:
    """Append one tensor record: magic, version byte, rank byte, u64 dims, f32 data."""
    a = np.asarray(array, dtype="<f4")
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", VERSION, a.ndim))
    fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    fh.write(a.tobytes(order="C"))


def read_tensor(fh) -> np.ndarray | None:
    """Read the next tensor record, or ``None`` at end of stream."""
    magic = fh.read(len(MAGIC))
    if not magic:
        return None
    if magic != MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    version, rank = struct.unpack("<BB", fh.read(2))
    if version != VERSION:
        raise ValueError(f"unsupported tensor version {version}")
    shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(fh.read(4 * count), dtype="<f4")
    if data.size != count:
        raise ValueError("truncated tensor record")
    return data.reshape(shape).astype(DTYPE)


def save_tensors(path, tensors: Iterable[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for t in tensors:
            write_tensor(fh, t)


def load_tensors(path) -> list[np.ndarray]:
    out = []
    with open(Path(path), "rb") as fh:
        while (t := read_tensor(fh)) is not None:
            out.append(t)
    return out
