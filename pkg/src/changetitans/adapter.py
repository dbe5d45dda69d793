"""Hierarchical adapter: spatial prior maps exchanged with encoder taps, then a 4-scale pyramid.

The spatial prior ``c`` is the token-wise concatenation of four maps at
strides p/4, p/2, p and 2p. Each of the four stages injects ``c`` into one
encoder tap and extracts the result back into ``c``; both directions are
gated by zero-initialised scalars, so a fresh adapter passes the prior
through unchanged.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .nn import Conv2d, CrossAttention, DepthwiseConv2d, LayerNorm, Linear, Module, Parameter
from .tensor import Tensor
from .vtitans import map_to_tokens, tokens_to_map

Shape2 = Tuple[int, int]


def scale_shapes(height: int, width: int, patch: int) -> List[Shape2]:
    """Spatial extents of the four pyramid levels (strides p/4, p/2, p, 2p)."""
    if height % (2 * patch) or width % (2 * patch):
        raise ValueError(f"image {height}x{width} must be divisible by 2*patch = {2 * patch}")
    return [(height * m // patch, width * m // patch) for m in (4, 2)] + \
        [(height // patch, width // patch), (height // (2 * patch), width // (2 * patch))]


def split_tokens(c, shapes: Sequence[Shape2]) -> List[Tensor]:
    """Cut ``[N, sum(h*w), C]`` back into per-scale maps ``[N, C, h, w]``."""
    total = sum(h * w for h, w in shapes)
    if c.shape[-2] != total:
        raise ValueError(f"token count {c.shape[-2]} does not match scales {list(shapes)} ({total})")
    out, start = [], 0
    for h, w in shapes:
        out.append(tokens_to_map(c[:, start:start + h * w, :], h, w))
        start += h * w
    return out


def join_maps(maps: Sequence[Tensor]) -> Tensor:
    return T.concat([map_to_tokens(m) for m in maps], axis=1)


class SpatialPrior(Module):
    """Convolutional stem reaching stride p/4, three stride-2 3x3 convs, and per-scale 1x1 projections."""

    def __init__(self, in_channels: int, dim: int, patch: int, rng: np.random.Generator, bias: bool = True):
        if patch < 4 or patch & (patch - 1):
            raise ValueError(f"patch size must be a power of two >= 4, got {patch}")
        n_pre = int(np.log2(patch // 4))
        # (0, 1, 0, 1): pad bottom/right only so a 3x3 stride-2 conv halves even sizes exactly
        half = (0, 1, 0, 1)
        self.stem = [Conv2d(in_channels, dim, 3, rng, bias=bias)]
        self.stem += [Conv2d(dim, dim, 3, rng, stride=2, padding=half, bias=bias) for _ in range(n_pre)]
        self.down = [Conv2d(dim, dim, 3, rng, stride=2, padding=half, bias=bias) for _ in range(3)]
        self.proj = [Conv2d(dim, dim, 1, rng, bias=bias) for _ in range(4)]

    def forward(self, image) -> List[Tensor]:
        x = image
        for conv in self.stem:
            x = T.silu(conv(x))
        feats = [x]
        for conv in self.down:
            x = T.silu(conv(x))
            feats.append(x)
        return [p(f) for p, f in zip(self.proj, feats)]


class CFFN(Module):
    """Token MLP with a per-scale depthwise 3x3 conv in the hidden layer; final layer zero-initialised."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.norm = LayerNorm(dim)
        self.fc1 = Linear(dim, hidden, rng)
        self.dw = DepthwiseConv2d(hidden, 3, rng)
        self.fc2 = Linear(hidden, dim, rng, zero_init=True)

    def hidden(self, c, shapes: Sequence[Shape2]) -> Tensor:
        """Depthwise-convolved hidden activations, before the nonlinearity."""
        maps = split_tokens(self.fc1(self.norm(c)), shapes)
        return join_maps([self.dw(m) for m in maps])

    def forward(self, c, shapes: Sequence[Shape2]) -> Tensor:
        return self.fc2(T.silu(self.hidden(c, shapes)))


class AdapterStage(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, cffn_ratio: float = 0.25):
        self.inject_attn = CrossAttention(dim, heads, rng)
        self.gamma_in = Parameter(0.0)
        self.extract_attn = CrossAttention(dim, heads, rng)
        self.gamma_ex = Parameter(0.0)
        self.cffn = CFFN(dim, max(1, int(dim * cffn_ratio)), rng)


def spatial_prior(image, adapter: "Adapter") -> Tensor:
    """Multi-scale prior tokens ``[N, 16T + 4T + T + T/4, C]`` from the convolutional stem."""
    return adapter.spatial_prior(image)


def inject(f, c, stage: AdapterStage) -> Tensor:
    """``f + gamma_in * CrossAttention(f, c)``: encoder tokens query the spatial prior."""
    if f.shape[-1] != c.shape[-1]:
        raise ValueError(f"channel mismatch: tap {f.shape}, prior {c.shape}")
    return f + stage.gamma_in * stage.inject_attn(f, c)


def extract(c, f_hat, stage: AdapterStage, shapes: Sequence[Shape2]) -> Tensor:
    """Prior tokens query the injected tap, then a convolutional feed-forward step."""
    if f_hat.shape[-1] != c.shape[-1]:
        raise ValueError(f"channel mismatch: tap {f_hat.shape}, prior {c.shape}")
    c_hat = c + stage.gamma_ex * stage.extract_attn(c, f_hat)
    return c_hat + stage.cffn(c_hat, shapes)


def build_pyramid(taps: Sequence[Tensor], c: Optional[Tensor], grid: Shape2,
                  shapes: Sequence[Shape2]) -> List[Tensor]:
    """``f'_j = resize(tap_j) + c_j``; with ``c=None`` only the resized taps are returned."""
    parts = split_tokens(c, shapes) if c is not None else [None] * 4
    out = []
    for tap, part, (h, w) in zip(taps, parts, shapes):
        level = T.bilinear_resize(tokens_to_map(tap, *grid), h, w)
        out.append(level if part is None else level + part)
    return out


class Adapter(Module):
    def __init__(self, in_channels: int, dim: int, patch: int, heads: int, rng: np.random.Generator,
                 bias: bool = True, cffn_ratio: float = 0.25):
        self.patch = patch
        self.spm = SpatialPrior(in_channels, dim, patch, rng, bias=bias)
        self.stages = [AdapterStage(dim, heads, rng, cffn_ratio) for _ in range(4)]

    def spatial_prior(self, image) -> Tensor:
        return join_maps(self.spm(image))

    def forward(self, image, taps: Sequence[Tensor]) -> List[Tensor]:
        h, w = image.shape[-2:]
        shapes = scale_shapes(h, w, self.patch)
        c = self.spatial_prior(image)
        for tap, stage in zip(taps, self.stages):
            c = extract(c, inject(tap, c, stage), stage, shapes)
        return build_pyramid(taps, c, (h // self.patch, w // self.patch), shapes)
