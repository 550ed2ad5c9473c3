"""Differentiable layer operations.

Spatial ops take ``[C, H, W]`` (single image) or ``[N, C, H, W]`` (batch)
inputs; a 3-D input yields a 3-D output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from coips.errors import DimensionError, GeometryError
from coips.engine.tensor import Tensor, clip_min, log, make_result

__all__ = [
    "LayerParams",
    "conv2d",
    "maxpool2d",
    "upsample2x",
    "relu",
    "leaky_relu",
    "softmax",
    "instance_norm",
    "linear",
    "concat",
    "flatten",
    "pick",
    "clip_min",
    "log",
]


@dataclass
class LayerParams:
    name: str
    weight: Tensor
    bias: Optional[Tensor] = None

    def tensors(self):
        yield f"{self.name}.weight", self.weight
        if self.bias is not None:
            yield f"{self.name}.bias", self.bias


def _batched(x: Tensor, op: str):
    if x.ndim == 4:
        return x.data, False
    if x.ndim == 3:
        return x.data[None], True
    raise DimensionError(f"{op} expects [C,H,W] or [N,C,H,W], got shape {x.shape}")


def conv2d(x: Tensor, params: LayerParams, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` with ``params.weight`` ``[C_out, C_in, k, k]``."""
    xd, squeeze = _batched(x, "conv2d")
    w = params.weight
    b = params.bias
    if w.ndim != 4:
        raise DimensionError(f"conv2d weight must be 4-D, got {w.shape}")
    n, c, h, wd = xd.shape
    c_out, c_in, kh, kw = w.shape
    if c_in != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {c_in}")
    if kh != kw:
        raise GeometryError(f"conv2d kernel must be square, got {kh}x{kw}")
    if b is not None and b.shape != (c_out,):
        raise DimensionError(f"conv2d bias shape {b.shape} != ({c_out},)")
    if padding < 0 or stride < 1:
        raise GeometryError(f"conv2d: invalid stride {stride} / padding {padding}")
    k = kh
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < k or wp < k or (hp - k) % stride or (wp - k) % stride:
        raise GeometryError(
            f"conv2d: ({h}+2*{padding}-{k})/{stride} is not a whole number of positions"
        )
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    if padding:
        xp = np.zeros((n, c, hp, wp), dtype=xd.dtype)
        xp[:, :, padding : padding + h, padding : padding + wd] = xd
    else:
        xp = xd
    cols = np.empty((c, k, k, n, ho, wo), dtype=xd.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    cols2 = cols.reshape(c * k * k, n * ho * wo)
    w2 = w.data.reshape(c_out, c * k * k)
    out = w2 @ cols2
    if b is not None:
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3))
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        g2 = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(c_out, -1)
        gw = (g2 @ cols2.T).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=1) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, k, k, n, ho, wo)
            dxp = np.zeros((c, n, hp, wp), dtype=xd.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
            gx = dxp[:, :, padding : padding + h, padding : padding + wd].transpose(1, 0, 2, 3)
            gx = np.ascontiguousarray(gx[0] if squeeze else gx)
        if b is None:
            return gx, gw
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward)


def maxpool2d(x: Tensor, window: int = 2, stride: Optional[int] = None) -> Tensor:
    """Window maximum; the backward pass routes to the first row-major argmax."""
    stride = window if stride is None else stride
    xd, squeeze = _batched(x, "maxpool2d")
    n, c, h, w = xd.shape
    if window < 1 or stride < 1 or h < window or w < window or (h - window) % stride or (w - window) % stride:
        raise GeometryError(f"maxpool2d: {h}x{w} does not tile window {window} / stride {stride}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1

    if window == stride:
        xv = xd[:, :, : ho * window, : wo * window]
        blocks = xv.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, ho, wo, window * window)
    else:
        view = np.lib.stride_tricks.sliding_window_view(xd, (window, window), axis=(2, 3))
        blocks = view[:, :, ::stride, ::stride].reshape(n, c, ho, wo, window * window)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        if window == stride:
            gb = np.zeros((n, c, ho, wo, window * window), dtype=g4.dtype)
            np.put_along_axis(gb, idx[..., None], g4[..., None], axis=-1)
            gb = gb.reshape(n, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5)
            gx = np.zeros_like(xd)
            gx[:, :, : ho * window, : wo * window] = gb.reshape(n, c, ho * window, wo * window)
        else:
            rows = (np.arange(ho) * stride)[:, None] + idx // window
            cols = (np.arange(wo) * stride)[None, :] + idx % window
            flat = rows * w + cols
            gx = np.zeros((n, c, h * w), dtype=g4.dtype)
            nc = np.arange(n * c)
            np.add.at(gx.reshape(n * c, h * w), (nc[:, None], flat.reshape(n * c, -1)), g4.reshape(n * c, -1))
            gx = gx.reshape(n, c, h, w)
        return (gx[0] if squeeze else gx,)

    return make_result(out, (x,), backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the last two axes."""
    if x.ndim < 2:
        raise DimensionError(f"upsample2x needs at least 2 dims, got {x.shape}")
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
    lead = x.shape[:-2]
    h, w = x.shape[-2:]

    def backward(g):
        return (g.reshape(*lead, h, 2, w, 2).sum(axis=(-3, -1)),)

    return make_result(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 is taken as 0
    mask = x.data > 0
    return make_result(np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_result(x.data * scale, (x,), lambda g: (g * scale,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.ndim == 0 or x.shape[axis] < 2:
        raise DimensionError(f"softmax needs at least 2 entries along axis {axis}, got {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), backward)


def instance_norm(x: Tensor, params: LayerParams, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalisation over H, W followed by an affine map."""
    xd, squeeze = _batched(x, "instance_norm")
    gamma, beta = params.weight, params.bias
    c = xd.shape[1]
    if gamma.shape != (c,) or (beta is not None and beta.shape != (c,)):
        raise DimensionError(f"instance_norm params do not match {c} channels")
    hw = xd.shape[2] * xd.shape[3]
    mean = xd.mean(axis=(2, 3), keepdims=True)
    centered = xd - mean
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    g4 = gamma.data.reshape(1, c, 1, 1)
    out = xhat * g4
    if beta is not None:
        out = out + beta.data.reshape(1, c, 1, 1)
    if squeeze:
        out = out[0]

    def backward(g):
        gg = g[None] if squeeze else g
        dgamma = (gg * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        dbeta = gg.sum(axis=(0, 2, 3)) if (beta is not None and beta.requires_grad) else None
        gx = None
        if x.requires_grad:
            dxhat = gg * g4
            s1 = dxhat.sum(axis=(2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
            gx = (inv_std / hw) * (hw * dxhat - s1 - xhat * s2)
            gx = gx[0] if squeeze else gx
        if beta is None:
            return gx, dgamma
        return gx, dgamma, dbeta

    parents = (x, gamma) if beta is None else (x, gamma, beta)
    return make_result(out, parents, backward)


def linear(x: Tensor, params: LayerParams) -> Tensor:
    """``x @ W.T + b`` with ``x`` of shape ``[N, F]`` and ``W`` of shape ``[out, F]``."""
    w, b = params.weight, params.bias
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if b.requires_grad else None)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    arrays = [t.data for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [a.shape[axis] for a in arrays])

    lead = (slice(None),) * (axis % out.ndim)

    def backward(g):
        return tuple(g[lead + (slice(bounds[i], bounds[i + 1]),)] for i in range(len(arrays)))

    return make_result(out, tuple(tensors), backward)


def flatten(x: Tensor) -> Tensor:
    """Collapse everything but the leading batch axis."""
    return x.reshape(x.shape[0], -1)


def pick(x: Tensor, index: np.ndarray) -> Tensor:
    """Row-wise gather: ``out[i] = x[i, index[i]]`` for a 2-D ``x``."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise DimensionError(f"pick: need [N,K] input and N labels, got {x.shape} / {index.shape}")
    rows = np.arange(x.shape[0])
    out = x.data[rows, index]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, index] = g
        return (gx,)

    return make_result(out, (x,), backward)
