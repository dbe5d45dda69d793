"""Spatial kernels on channels-first maps: convolution, padding, pooling, resizing.

Maps are ``[C, H, W]`` or batched ``[N, C, H, W]``. Convolution is
cross-correlation (no kernel flip).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops
from .core import DTYPE, Tensor, as_tensor, make


def _pads(padding):
    if isinstance(padding, int):
        return (padding,) * 4
    if len(padding) == 2:
        return (padding[0], padding[0], padding[1], padding[1])
    return tuple(int(p) for p in padding)


def _out_size(n, lo, hi, k, stride, what):
    span = n + lo + hi - k
    if span < 0 or span % stride:
        raise ValueError(
            f"{what}: non-integral output size ({n} + {lo} + {hi} - {k}) / {stride} + 1")
    return span // stride + 1


def _batched(x: Tensor):
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected [C,H,W] or [N,C,H,W], got {x.shape}")
    return x, False


def _col2im(gcols, xp_shape, k, stride, ho, wo):
    # gcols: [N, C, Ho, Wo, k, k]
    gxp = np.zeros(xp_shape, dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[..., i, j]
    return gxp


def _unpad(a, pt, pb, pl, pr):
    h, w = a.shape[-2:]
    return a[..., pt:h - pb, pl:w - pr]


def conv2d(x, w, b=None, stride: int = 1, padding=0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``padding`` is an int or ``(top, bottom, left, right)``; the output size
    ``(H + pads - k) / stride + 1`` must be integral.
    """
    x, w = as_tensor(x), as_tensor(w)
    x4, squeeze = _batched(x)
    cout, cin, k, k2 = w.shape
    if k != k2:
        raise ValueError(f"square kernels only, got {w.shape}")
    if x4.shape[1] != cin:
        raise ValueError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    pt, pb, pl, pr = _pads(padding)
    n, _, h, wd = x4.shape
    ho = _out_size(h, pt, pb, k, stride, "conv2d")
    wo = _out_size(wd, pl, pr, k, stride, "conv2d")
    xp = np.pad(x4.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x4.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x4, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
        parents.append(b)

    def backward(g):
        gx = gw = None
        if x4.requires_grad:
            gcols = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
            gx = _unpad(_col2im(gcols, xp.shape, k, stride, ho, wo), pt, pb, pl, pr)
        if w.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    y = make(np.ascontiguousarray(out), parents, backward, "conv2d")
    return ops.reshape(y, y.shape[1:]) if squeeze else y


def depthwise_conv2d(x, w, b=None, stride: int = 1, padding=0) -> Tensor:
    """Per-channel cross-correlation; ``w`` is ``[C, 1, k, k]`` or ``[C, k, k]``."""
    x, w = as_tensor(x), as_tensor(w)
    x4, squeeze = _batched(x)
    if w.ndim == 4:
        w = ops.reshape(w, (w.shape[0],) + w.shape[2:])
    c, k, k2 = w.shape
    if k != k2 or x4.shape[1] != c:
        raise ValueError(f"depthwise_conv2d mismatch: input {x.shape}, kernel {w.shape}")
    pt, pb, pl, pr = _pads(padding)
    n, _, h, wd = x4.shape
    ho = _out_size(h, pt, pb, k, stride, "depthwise_conv2d")
    wo = _out_size(wd, pl, pr, k, stride, "depthwise_conv2d")
    xp = np.pad(x4.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x4.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("nchwij,cij->nchw", win, w.data)
    parents = [x4, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
        parents.append(b)

    def backward(g):
        gx = gw = None
        if x4.requires_grad:
            gcols = g[..., None, None] * w.data[None, :, None, None, :, :]
            gx = _unpad(_col2im(gcols, xp.shape, k, stride, ho, wo), pt, pb, pl, pr)
        if w.requires_grad:
            gw = np.einsum("nchw,nchwij->cij", g, win)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    y = make(out, parents, backward, "depthwise_conv2d")
    return ops.reshape(y, y.shape[1:]) if squeeze else y


def pad2d(x, padding, mode: str = "zeros") -> Tensor:
    """Pad the last two axes; ``mode`` is ``zeros`` or ``reflect`` (edge not repeated)."""
    x = as_tensor(x)
    pt, pb, pl, pr = _pads(padding)
    if mode == "reflect":
        h, w = x.shape[-2:]
        rows = np.pad(np.arange(h), (pt, pb), mode="reflect")
        cols = np.pad(np.arange(w), (pl, pr), mode="reflect")
        return ops.take(ops.take(x, rows, axis=-2), cols, axis=-1)
    if mode != "zeros":
        raise ValueError(f"unknown padding mode {mode!r}")
    widths = [(0, 0)] * (x.ndim - 2) + [(pt, pb), (pl, pr)]
    return make(np.pad(x.data, widths), (x,), lambda g: (_unpad(g, pt, pb, pl, pr),), "pad")


def pool_spatial(x, mode: str = "avg") -> Tensor:
    """Global pooling over H and W: ``[..., C, H, W] -> [..., C]``."""
    if mode == "avg":
        return ops.mean(x, axis=(-2, -1))
    if mode == "max":
        return ops.max(x, axis=(-2, -1))
    raise ValueError(f"unknown pool mode {mode!r}")


def pool_channel(x, mode: str = "avg") -> Tensor:
    """Pooling over channels: ``[..., C, H, W] -> [..., 1, H, W]``."""
    if mode == "avg":
        return ops.mean(x, axis=-3, keepdims=True)
    if mode == "max":
        return ops.max(x, axis=-3, keepdims=True)
    raise ValueError(f"unknown pool mode {mode!r}")


@lru_cache(maxsize=256)
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights ``[n_out, n_in]`` with half-pixel centres and edge clamping."""
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    m.setflags(write=False)
    return m


def bilinear_resize(x, height: int, width: int) -> Tensor:
    """Resize the last two axes; same-size calls return the input unchanged."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if height < 1 or width < 1:
        raise ValueError(f"target size must be positive, got {height}x{width}")
    if (h, w) == (height, width):
        return x
    y = x
    if h != height:
        y = ops.matmul(Tensor(interp_matrix(h, height)), y)
    if w != width:
        y = ops.matmul(y, Tensor(interp_matrix(w, width).T))
    return y
