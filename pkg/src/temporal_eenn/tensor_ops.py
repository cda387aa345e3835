"""Dense float32 layer primitives with exact multiply-accumulate accounting.

Tensors are plain ``numpy.ndarray`` objects in channels-last layout
(``[H, W, C]`` for feature maps). Every layer function returns
``(output, macs)`` where ``macs`` is a Python ``int``.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np

DTYPE = np.float32

Tensor = np.ndarray


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with an operation."""


def as_tensor(x, ndim: int | None = None, name: str = "input") -> Tensor:
    t = np.asarray(x, dtype=DTYPE)
    if ndim is not None and t.ndim != ndim:
        raise ShapeError(f"{name}: expected rank {ndim}, got shape {t.shape}")
    if t.size == 0 or any(d < 1 for d in t.shape):
        raise ShapeError(f"{name}: all dims must be >= 1, got shape {t.shape}")
    return t


def _pair(v) -> Tuple[int, int]:
    if isinstance(v, int):
        return v, v
    a, b = v
    return int(a), int(b)


def conv_output_size(size: int, k: int, s: int, padding: str) -> Tuple[int, int]:
    """Return ``(out_size, pad_before)`` for one spatial axis.

    ``same`` follows the usual TensorFlow rule: ``out = ceil(size / s)`` with
    the extra padding pixel placed after the input.
    """
    if s < 1:
        raise ShapeError(f"stride must be >= 1, got {s}")
    if padding == "valid":
        if k > size:
            raise ShapeError(f"kernel {k} larger than input {size} with valid padding")
        return (size - k) // s + 1, 0
    if padding == "same":
        out = -(-size // s)
        total = max((out - 1) * s + k - size, 0)
        return out, total // 2
    raise ShapeError(f"unknown padding mode {padding!r}")


def _pad(x: Tensor, kh, kw, sh, sw, padding):
    h, w, c = x.shape
    ho, pt = conv_output_size(h, kh, sh, padding)
    wo, pl = conv_output_size(w, kw, sw, padding)
    if padding == "same":
        hp = max((ho - 1) * sh + kh, h + pt)
        wp = max((wo - 1) * sw + kw, w + pl)
        if (hp, wp) != (h, w):
            xp = np.zeros((hp, wp, c), dtype=x.dtype)
            xp[pt : pt + h, pl : pl + w] = x
            x = xp
    return x, ho, wo


def _taps(xp: Tensor, kh, kw, sh, sw, ho, wo):
    # one strided [ho, wo, C] view per kernel tap
    for i in range(kh):
        for j in range(kw):
            yield i, j, xp[i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw]


def conv2d(input, kernel, bias=None, stride=1, padding="valid"):
    x = as_tensor(input, 3)
    k = as_tensor(kernel, 4, "kernel")
    kh, kw, cin, cout = k.shape
    if cin != x.shape[2]:
        raise ShapeError(f"kernel expects {cin} input channels, input has {x.shape[2]}")
    sh, sw = _pair(stride)
    xp, ho, wo = _pad(x, kh, kw, sh, sw, padding)
    out = np.zeros((ho, wo, cout), dtype=DTYPE)
    for i, j, tap in _taps(xp, kh, kw, sh, sw, ho, wo):
        out += tap @ k[i, j]
    if bias is not None:
        b = np.asarray(bias, dtype=DTYPE)
        if b.shape != (cout,):
            raise ShapeError(f"bias shape {b.shape} does not match {cout} output channels")
        out += b
    return out, kh * kw * cin * cout * ho * wo


def depthwise_conv2d(input, kernel, bias=None, stride=1, padding="valid"):
    x = as_tensor(input, 3)
    k = as_tensor(kernel, 3, "kernel")
    kh, kw, c = k.shape
    if c != x.shape[2]:
        raise ShapeError(f"depthwise kernel has {c} channels, input has {x.shape[2]}")
    sh, sw = _pair(stride)
    xp, ho, wo = _pad(x, kh, kw, sh, sw, padding)
    out = np.zeros((ho, wo, c), dtype=DTYPE)
    for i, j, tap in _taps(xp, kh, kw, sh, sw, ho, wo):
        out += tap * k[i, j]
    if bias is not None:
        b = np.asarray(bias, dtype=DTYPE)
        if b.shape != (c,):
            raise ShapeError(f"bias shape {b.shape} does not match {c} channels")
        out += b
    return out, kh * kw * c * ho * wo


def pool2d(input, kind="max", window=2, stride=None):
    """Valid-mode 2D pooling.

    Max-pool is counted as 0 MACs, average pool as one MAC per output element.
    """
    x = as_tensor(input, 3)
    ph, pw = _pair(window)
    sh, sw = _pair(stride if stride is not None else window)
    h, w, c = x.shape
    if ph > h or pw > w:
        raise ShapeError(f"pool window {(ph, pw)} larger than input {(h, w)}")
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pool kind {kind!r}")
    ho, _ = conv_output_size(h, ph, sh, "valid")
    wo, _ = conv_output_size(w, pw, sw, "valid")
    if (ph, pw) == (h, w):
        if kind == "max":
            return x.max(axis=(0, 1), keepdims=True), 0
        return x.mean(axis=(0, 1), dtype=DTYPE, keepdims=True), c
    taps = _taps(x, ph, pw, sh, sw, ho, wo)
    out = next(taps)[2].copy()
    for _, _, tap in taps:
        if kind == "max":
            np.maximum(out, tap, out=out)
        else:
            out += tap
    if kind == "max":
        return out, 0
    out *= DTYPE(1.0 / (ph * pw))
    return out, ho * wo * c


def dense(input, weights, bias=None):
    x = as_tensor(input, 1)
    wt = as_tensor(weights, 2, "weights")
    n, m = wt.shape
    if x.shape[0] != n:
        raise ShapeError(f"dense expects {n} inputs, got {x.shape[0]}")
    out = x @ wt
    if bias is not None:
        b = np.asarray(bias, dtype=DTYPE)
        if b.shape != (m,):
            raise ShapeError(f"bias shape {b.shape} does not match {m} outputs")
        out = out + b
    return out.astype(DTYPE, copy=False), n * m


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, DTYPE(0))


def softmax(logits) -> Tensor:
    z = np.asarray(logits, dtype=DTYPE)
    if z.ndim != 1 or z.size == 0:
        raise ShapeError(f"softmax expects a non-empty vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input contains non-finite values")
    # float64 for the normalisation keeps the sum within 1e-6 after the cast back
    e = np.exp(z.astype(np.float64) - z.max())
    return (e / e.sum()).astype(DTYPE)


def reorder_time_antenna(input) -> Tensor:
    """Fold the time axis into the channel axis: ``[T,H,W,C] -> [H,W,T*C]``.

    Element ``(t, h, w, c)`` lands at ``(h, w, t*C + c)``.
    """
    x = as_tensor(input, 4)
    t, h, w, c = x.shape
    return np.ascontiguousarray(x.transpose(1, 2, 0, 3)).reshape(h, w, t * c)


def unreorder_time_antenna(input, t: int) -> Tensor:
    x = as_tensor(input, 3)
    h, w, tc = x.shape
    if tc % t:
        raise ShapeError(f"channel dim {tc} not divisible by T={t}")
    return np.ascontiguousarray(x.reshape(h, w, t, tc // t).transpose(2, 0, 1, 3))


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    return math.sqrt(float(np.sum((a - b) ** 2)))


def argmax(v) -> int:
    """Index of the maximum; ties go to the lowest index."""
    v = np.asarray(v)
    if v.size == 0:
        raise ValueError("argmax of an empty vector")
    # np.argmax already returns the first occurrence
    return int(np.argmax(v))
