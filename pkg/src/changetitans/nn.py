"""Parameter containers and the small layer set shared by every block."""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Iterator, Optional, Tuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


class NumericError(FloatingPointError):
    """A module produced non-finite values."""


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(np.array(data, dtype=T.DTYPE), requires_grad=True, name=name)


_anomaly = threading.local()


@contextmanager
def detect_anomaly():
    """Raise :class:`NumericError` naming the first module whose output is non-finite."""
    prev = getattr(_anomaly, "on", False)
    _anomaly.on = True
    try:
        yield
    finally:
        _anomaly.on = prev


def _all_finite(out) -> bool:
    if isinstance(out, Tensor):
        return bool(np.isfinite(out.data).all())
    if isinstance(out, (tuple, list)):
        return all(_all_finite(o) for o in out)
    if isinstance(out, dict):
        return all(_all_finite(o) for o in out.values())
    return True


class Module:
    """Attribute-walking parameter container in the usual deep-learning style."""

    _path = "<root>"

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        out = self.forward(*args, **kwargs)
        if getattr(_anomaly, "on", False) and not _all_finite(out):
            raise NumericError(f"non-finite output from module {self._path} ({type(self).__name__})")
        return out

    def _children(self) -> Iterator[Tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_parameters(name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix or "<root>", self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}" if not prefix else f"{prefix}.{key}")

    def assign_paths(self) -> None:
        for name, mod in self.named_modules():
            mod._path = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=T.DTYPE)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """``y = x @ weight + bias`` with ``weight`` stored as ``[in, out]``."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero_init: bool = False):
        w = np.zeros((d_in, d_out)) if zero_init else uniform_init(rng, (d_in, d_out), d_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x):
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.weight, self.bias, self.eps)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x):
        return self.fc2(T.silu(self.fc1(x)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, c = x.shape
    return T.swapaxes(T.reshape(x, tuple(lead) + (n, heads, c // heads)), -3, -2)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d = x.shape
    return T.reshape(T.swapaxes(x, -3, -2), tuple(lead) + (n, h * d))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int, return_weights: bool = False):
    """Multi-head scaled dot-product attention over already-projected inputs.

    ``q`` is ``[..., n, C]``, ``k`` and ``v`` are ``[..., m, C]``.
    """
    c = q.shape[-1]
    if c % heads:
        raise ValueError(f"dim {c} not divisible by {heads} heads")
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scores = T.matmul(qh, T.swapaxes(kh, -1, -2)) * (1.0 / np.sqrt(c // heads))
    weights = T.softmax(scores, axis=-1)
    out = merge_heads(T.matmul(weights, vh))
    return (out, weights) if return_weights else out


class CrossAttention(Module):
    """Pre-normed multi-head attention of ``queries`` over ``context``."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.norm_q = LayerNorm(dim)
        self.norm_kv = LayerNorm(dim)
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)

    def value(self, context):
        """Output-projected values of each context token."""
        return self.proj(self.v(self.norm_kv(context)))

    def forward(self, queries, context):
        ctx = self.norm_kv(context)
        out = attention(self.q(self.norm_q(queries)), self.k(ctx), self.v(ctx), self.heads)
        return self.proj(out)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding=None, bias: bool = True, zero_init: bool = False):
        shape = (c_out, c_in, k, k)
        self.weight = Parameter(np.zeros(shape) if zero_init else uniform_init(rng, shape, c_in * k * k))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, k: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, (channels, 1, k, k), k * k))
        self.bias = Parameter(np.zeros(channels)) if bias else None
        self.padding = k // 2

    def forward(self, x):
        return T.depthwise_conv2d(x, self.weight, self.bias, 1, self.padding)
