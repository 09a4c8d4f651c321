"""Differentiable 1D ops on (batch, channels, length) tensors."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor

_GELU_C = float(np.sqrt(2.0 / np.pi))
LEAKY_SLOPE = 0.01
ISRLU_ALPHA = 1.0


def same_padding(kernel: int) -> Tuple[int, int]:
    """(left, right) padding keeping the length; even kernels pad more on the left."""
    left = kernel // 2
    return left, kernel - 1 - left


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Stride-1 'same' cross-correlation. x: (B, Cin, L), w: (Cout, Cin, K)."""
    xd, wd = x.data, w.data
    if xd.ndim != 3 or wd.ndim != 3 or xd.shape[1] != wd.shape[1]:
        raise ValueError(f"conv1d shape mismatch: x {xd.shape}, w {wd.shape}")
    bsz, _, length = xd.shape
    kernel = wd.shape[2]
    if kernel == 1:
        w2 = wd[:, :, 0]
        y = np.matmul(w2, xd)
        cols = None
    else:
        left, right = same_padding(kernel)
        xp = np.pad(xd, ((0, 0), (0, 0), (left, right)))
        cols = sliding_window_view(xp, kernel, axis=2)  # (B, Cin, L, K)
        y = np.tensordot(cols, wd, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if b is not None:
        y = y + b.data[None, :, None]
    y = np.ascontiguousarray(y)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g: np.ndarray) -> None:
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2)))
        if kernel == 1:
            if w.requires_grad:
                w.accumulate(np.tensordot(g, xd, axes=([0, 2], [0, 2]))[:, :, None])
            if x.requires_grad:
                x.accumulate(np.matmul(w2.T, g))
            return
        if w.requires_grad:
            w.accumulate(np.tensordot(g, cols, axes=([0, 2], [0, 2])))
        if x.requires_grad:
            # full correlation of g with the flipped kernel, restricted to unpadded points
            left, right = same_padding(kernel)
            gp = np.pad(g, ((0, 0), (0, 0), (right, left)))
            gcols = sliding_window_view(gp, kernel, axis=2)  # (B, Cout, L, K)
            dx = np.tensordot(gcols, wd[:, :, ::-1], axes=([1, 3], [0, 2])).transpose(0, 2, 1)
            x.accumulate(dx)

    return Tensor(y, parents, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        b.accumulate(g)

    return Tensor(a.data + b.data, (a, b), backward)


def mul_const(x: Tensor, mask: np.ndarray) -> Tensor:
    """Elementwise product with a broadcastable constant (dropout masks)."""

    def backward(g: np.ndarray) -> None:
        gx = g * mask
        if gx.shape != x.data.shape:
            gx = np.broadcast_to(gx, x.data.shape)
        x.accumulate(gx)

    return Tensor(x.data * mask, (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or rate <= 0:
        return x
    mask = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul_const(x, mask)


def drop_path(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Zero whole samples of a residual branch with probability ``rate``."""
    if not training or rate <= 0:
        return x
    keep = (rng.random((x.data.shape[0], 1, 1)) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul_const(x, keep)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (batch, length). Updates running stats in place when training."""
    xd = x.data
    if training:
        if xd.shape[0] < 2:
            raise ValueError("batch norm in training mode needs a batch of at least 2")
        mean = xd.mean(axis=(0, 2))
        var = xd.var(axis=(0, 2))
        n = xd.shape[0] * xd.shape[2]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None]) * inv[None, :, None]
    y = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward(g: np.ndarray) -> None:
        gamma.accumulate((g * xhat).sum(axis=(0, 2)))
        beta.accumulate(g.sum(axis=(0, 2)))
        if not x.requires_grad:
            return
        dxhat = g * gamma.data[None, :, None]
        if training:
            m = xd.shape[0] * xd.shape[2]
            s1 = dxhat.sum(axis=(0, 2), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
            x.accumulate(inv[None, :, None] / m * (m * dxhat - s1 - xhat * s2))
        else:
            x.accumulate(dxhat * inv[None, :, None])

    return Tensor(y.astype(xd.dtype, copy=False), (x, gamma, beta), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act_forward(kind: str, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Activation value and its derivative."""
    if kind == "relu":
        return np.maximum(x, 0), (x > 0).astype(x.dtype)
    if kind == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x), np.where(x > 0, 1.0, LEAKY_SLOPE).astype(x.dtype)
    if kind == "gelu":
        x2 = x * x
        t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
        half = 0.5 * (1.0 + t)
        dy = half + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return x * half, dy
    if kind == "swish":
        s = _sigmoid(x)
        return x * s, s + x * s * (1.0 - s)
    if kind == "mish":
        sp = np.logaddexp(0.0, x)
        t = np.tanh(sp)
        return x * t, t + x * (1.0 - t * t) * _sigmoid(x)
    if kind == "isrlu":
        r = 1.0 / np.sqrt(1.0 + ISRLU_ALPHA * x * x)
        return np.where(x >= 0, x, x * r), np.where(x >= 0, 1.0, r**3).astype(x.dtype)
    if kind == "sigmoid":
        s = _sigmoid(x)
        return s, s * (1.0 - s)
    if kind == "identity":
        return x, np.ones_like(x)
    raise ValueError(f"unknown activation {kind!r}")


ACTIVATIONS = ("relu", "leaky_relu", "gelu", "swish", "mish", "isrlu")


def activation(x: Tensor, kind: str) -> Tensor:
    y, dy = _act_forward(kind, x.data)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * dy)

    return Tensor(y.astype(x.data.dtype, copy=False), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def maxpool1d(x: Tensor) -> Tensor:
    """Window-2 stride-2 max pool. Odd lengths are padded by repeating the last
    point, so the output has ceil(L / 2) points; ties go to the first index."""
    xd = x.data
    bsz, ch, length = xd.shape
    if length % 2:
        xd = np.concatenate([xd, xd[:, :, -1:]], axis=2)
    pairs = xd.reshape(bsz, ch, -1, 2)
    second = pairs[..., 1] > pairs[..., 0]
    y = np.where(second, pairs[..., 1], pairs[..., 0])

    def backward(g: np.ndarray) -> None:
        full = np.zeros(pairs.shape, dtype=g.dtype)
        full[..., 0] = np.where(second, 0, g)
        full[..., 1] = np.where(second, g, 0)
        full = full.reshape(bsz, ch, -1)
        if length % 2:
            full[:, :, length - 1] += full[:, :, length]
        x.accumulate(full[:, :, :length])

    return Tensor(y, (x,), backward)


def upsample(x: Tensor, length: int) -> Tensor:
    """Nearest-neighbour x2 upsampling cropped to ``length`` points."""
    xd = x.data
    n = xd.shape[2]
    if not 2 * n - 1 <= length <= 2 * n:
        raise ValueError(f"cannot upsample {n} points to {length}")
    y = np.repeat(xd, 2, axis=2)[:, :, :length]

    def backward(g: np.ndarray) -> None:
        if length < 2 * n:
            g = np.concatenate([g, np.zeros_like(g[:, :, :1])], axis=2)
        x.accumulate(g.reshape(g.shape[0], g.shape[1], n, 2).sum(axis=3))

    return Tensor(y, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.data.shape[axis] for t in xs]
    y = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, a, b in zip(xs, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(a, b)
            t.accumulate(g[tuple(sl)])

    return Tensor(y, tuple(xs), backward)


def select_channels(x: Tensor, channels: List[int]) -> Tensor:
    idx = list(channels)
    y = x.data[:, idx]

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[:, idx] += g
        x.accumulate(full)

    return Tensor(y, (x,), backward)
