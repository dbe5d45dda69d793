"""Two-stream CBAM fusion: each temporal stream is gated by attention computed from the other."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module, Parameter, uniform_init
from .tensor import Tensor

VARIANTS = ("sum", "diff", "conv")


class CbamParams(Module):
    """Channel FC weights ``w1``, ``w2`` (``[C, C]``, applied as ``pooled @ w``) and the 3x3 spatial conv.

    ``mix`` is the 1x1 conv over the concatenated streams used by the
    ``conv`` fusion variant.
    """

    def __init__(self, dim: int, rng: np.random.Generator, variant: str = "sum"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown fusion variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.w1 = Parameter(uniform_init(rng, (dim, dim), dim))
        self.w2 = Parameter(uniform_init(rng, (dim, dim), dim))
        self.conv_w = Parameter(uniform_init(rng, (1, 2, 3, 3), 18))
        self.conv_b = Parameter(np.zeros(1))
        self.mix = Conv2d(2 * dim, dim, 1, rng) if variant == "conv" else None

    def forward(self, f1, f2):
        return fuse(f1, f2, self, self.variant)


def channel_gate(source, params: CbamParams) -> Tensor:
    """``sigmoid(avg @ w1 + max @ w2)`` from spatial pooling of ``source [N, C, h, w]``; returns ``[N, C]``."""
    source = T.as_tensor(source)
    if source.shape[-3] != params.w1.shape[0]:
        raise ValueError(f"channel mismatch: source {source.shape}, weights {params.w1.shape}")
    avg = T.pool_spatial(source, "avg")
    top = T.pool_spatial(source, "max")
    if source.ndim == 3:
        avg, top = T.reshape(avg, (1, -1)), T.reshape(top, (1, -1))
        return T.sigmoid(T.matmul(avg, params.w1) + T.matmul(top, params.w2))[0]
    return T.sigmoid(T.matmul(avg, params.w1) + T.matmul(top, params.w2))


def spatial_gate(source, params: CbamParams) -> Tensor:
    """Per-pixel gate ``[N, 1, h, w]`` from channel-pooled maps through a reflect-padded 3x3 conv."""
    source = T.as_tensor(source)
    pooled = T.concat([T.pool_channel(source, "avg"), T.pool_channel(source, "max")], axis=-3)
    padded = T.pad2d(pooled, 1, mode="reflect")
    return T.sigmoid(T.conv2d(padded, params.conv_w, params.conv_b, 1, 0))


def _channel_apply(gate: Tensor, x: Tensor) -> Tensor:
    return T.reshape(gate, gate.shape + (1, 1)) * x


def fuse(f1, f2, params: CbamParams, variant: str = "sum") -> Tensor:
    """Cross-gated channel then spatial attention on both streams, combined by ``variant``.

    ``sum`` adds the gated streams, ``diff`` takes their absolute difference,
    ``conv`` mixes their concatenation with a 1x1 conv.
    """
    f1, f2 = T.as_tensor(f1), T.as_tensor(f2)
    if f1.shape != f2.shape:
        raise ValueError(f"stream shapes differ: {f1.shape} vs {f2.shape}")
    f1_cam = _channel_apply(channel_gate(f2, params), f1)
    f2_cam = _channel_apply(channel_gate(f1, params), f2)
    f1_sam = spatial_gate(f2_cam, params) * f1_cam
    f2_sam = spatial_gate(f1_cam, params) * f2_cam
    if variant == "sum":
        return f1_sam + f2_sam
    if variant == "diff":
        return T.abs(f1_sam - f2_sam)
    if variant == "conv":
        if params.mix is None:
            raise ValueError("conv fusion needs params built with variant='conv'")
        return params.mix(T.concat([f1_sam, f2_sam], axis=-3))
    raise ValueError(f"unknown fusion variant {variant!r}")
