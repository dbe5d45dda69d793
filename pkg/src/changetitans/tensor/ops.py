"""Elementwise, reduction, shape and linear-algebra ops with their backward rules."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .core import DTYPE, Tensor, as_tensor, make


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    c = float(exponent)
    return make(a.data ** c, (a,), lambda g: (g * c * a.data ** (c - 1.0),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return make(np.logaddexp(0.0, a.data), (a,), lambda g: (g * expit(a.data),), "softplus")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return make(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),), "silu")


def relu(a) -> Tensor:
    a = as_tensor(a)
    return make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),), "relu")


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the gradient passes only where the input is inside the interval."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------- reductions
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _expand(g, axes, keepdims):
    if keepdims:
        return g
    for ax in axes:
        g = np.expand_dims(g, ax)
    return g


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    return make(a.data.sum(axis=axes, keepdims=keepdims), (a,),
                lambda g: (np.broadcast_to(_expand(g, axes, keepdims), a.shape),), "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes]))
    return make(a.data.mean(axis=axes, keepdims=keepdims), (a,),
                lambda g: (np.broadcast_to(_expand(g, axes, keepdims) / n, a.shape),), "mean")


def max(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    """Maximum over ``axis``; tied maxima share the incoming gradient equally."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    top = a.data.max(axis=axes, keepdims=True)

    def backward(g):
        mask = (a.data == top).astype(DTYPE)
        mask /= mask.sum(axis=axes, keepdims=True)
        return (mask * _expand(g, axes, keepdims),)

    out = top if keepdims else np.squeeze(top, axis=axes)
    return make(out, (a,), backward, "max")


# --------------------------------------------------------------------- shape
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    inv = tuple(np.argsort(axes))
    return make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return make(np.swapaxes(a.data, ax1, ax2), (a,),
                lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic(idx)

    def backward(g):
        out = np.zeros(a.shape, dtype=DTYPE)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return make(a.data[idx], (a,), backward, "getitem")


def take(a, indices, axis: int) -> Tensor:
    """Gather along one axis with an integer index array (repeats allowed)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim

    def backward(g):
        out = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(np.moveaxis(out, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (out,)

    return make(np.take(a.data, indices, axis=axis), (a,), backward, "take")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if len(ts) == 1:
        return ts[0]
    axis = axis % ts[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return make(np.concatenate([t.data for t in ts], axis=axis), ts,
                lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    axis = axis % out.ndim
    return make(out, ts, lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))), "stack")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    return make(np.broadcast_to(a.data, shape), (a,),
                lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


# ------------------------------------------------------------ linear algebra
def matmul(a, b) -> Tensor:
    """Batched matrix product ``[..., m, k] @ [..., k, n]`` with broadcast batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # stacked rows against one matrix: a single GEMM, and a single GEMM for the weight gradient
        k = a.shape[-1]
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))

        def backward_flat(g):
            ga = g @ b.data.T if a.requires_grad else None
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]) if b.requires_grad else None
            return ga, gb

        return make(out, (a, b), backward_flat, "matmul")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ValueError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return make(out, (a, b), backward, "matmul")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (a,), backward, "softmax")


def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd

    def backward(g):
        gxhat = g * weight.data
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, weight.shape), _unbroadcast(g, bias.shape)

    return make(xhat * weight.data + bias.data, (x, weight, bias), backward, "layer_norm")


def sparse_apply(a, matrix) -> Tensor:
    """Apply a fixed (scipy sparse or dense) ``[m, n]`` matrix along the last axis."""
    a = as_tensor(a)
    n = a.shape[-1]
    if matrix.shape[1] != n:
        raise ValueError(f"sparse_apply: matrix {matrix.shape} vs last axis {n}")
    lead = a.shape[:-1]
    flat = a.data.reshape(-1, n)
    out = np.asarray(matrix @ flat.T).T.reshape(lead + (matrix.shape[0],))

    def backward(g):
        gf = g.reshape(-1, matrix.shape[0])
        return (np.asarray(matrix.T @ gf.T).T.reshape(a.shape),)

    return make(out, (a,), backward, "sparse_apply")
