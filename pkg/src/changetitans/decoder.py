"""U-shaped decoder with Titans refinement and learned convex upsampling.

Convex upsampling by factor ``s`` with a ``k x k`` neighbourhood: every
high-resolution pixel maps to the low-resolution location
``u = (r + 0.5) / s - 0.5`` (half-pixel centres); ``k*k`` values are sampled
bilinearly at ``u + d`` for offsets ``d`` in ``-(k//2) .. k//2`` along each
axis (edge-clamped), and mixed with softmax weights predicted per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor
from .vtitans import TitansBlock, map_to_tokens, tokens_to_map


def _bilinear_taps(pos: np.ndarray, n: int):
    pos = np.clip(pos, 0.0, n - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = pos - i0
    return i0, i1, frac


@lru_cache(maxsize=64)
def convex_sampling_matrix(h: int, w: int, factor: int, k: int) -> sp.csr_matrix:
    """Sparse ``[k*k*H*W, h*w]`` operator producing the bilinearly sampled neighbourhoods.

    Row ``(i * H + r) * W + c`` holds the weights of neighbour ``i`` (row-major
    over the ``k x k`` offsets) for high-resolution pixel ``(r, c)``.
    """
    if k % 2 == 0:
        raise ValueError(f"neighbourhood size must be odd, got {k}")
    H, W = h * factor, w * factor
    u = (np.arange(H) + 0.5) / factor - 0.5
    v = (np.arange(W) + 0.5) / factor - 0.5
    offsets = np.arange(k) - k // 2
    rows, cols, vals = [], [], []
    rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    for a, dy in enumerate(offsets):
        y0, y1, fy = _bilinear_taps(u + dy, h)
        for b, dx in enumerate(offsets):
            x0, x1, fx = _bilinear_taps(v + dx, w)
            row = ((a * k + b) * H + rr) * W + cc
            for yi, wy in ((y0, 1.0 - fy), (y1, fy)):
                for xi, wx in ((x0, 1.0 - fx), (x1, fx)):
                    rows.append(row.ravel())
                    cols.append((yi[rr] * w + xi[cc]).ravel())
                    vals.append((wy[rr] * wx[cc]).ravel())
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(k * k * H * W, h * w))
    return m.tocsr()  # duplicate entries (clamped taps) are summed here


def sample_patches(lr, factor: int, k: int = 3) -> Tensor:
    """``[..., h, w] -> [..., k*k, h*s, w*s]`` neighbourhood samples around each mapped HR pixel."""
    lr = T.as_tensor(lr)
    *lead, h, w = lr.shape
    mat = convex_sampling_matrix(h, w, factor, k)
    flat = T.reshape(lr, tuple(lead) + (h * w,))
    return T.reshape(T.sparse_apply(flat, mat), tuple(lead) + (k * k, h * factor, w * factor))


class ConvexHead(Module):
    """Shallow conv head predicting ``k*k*s*s`` mixing logits per low-resolution pixel."""

    def __init__(self, channels: int, factor: int, rng: np.random.Generator, k: int = 3):
        if k % 2 == 0 or factor < 1:
            raise ValueError(f"need odd k and factor >= 1, got k={k}, factor={factor}")
        self.k, self.factor = k, factor
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, k * k * factor * factor, 1, rng)

    def forward(self, y):
        return self.conv2(T.silu(self.conv1(y)))


def convex_weights(y_hat, head: ConvexHead) -> Tensor:
    """Per-HR-pixel softmax weights over the ``k*k`` neighbours: ``[N, k*k, H, W]``."""
    logits = head(y_hat)
    n, _, h, w = logits.shape
    k2, s = head.k * head.k, head.factor
    x = T.reshape(logits, (n, k2, s, s, h, w))
    x = T.reshape(T.transpose(x, (0, 1, 4, 2, 5, 3)), (n, k2, h * s, w * s))
    return T.softmax(x, axis=1)


def convex_upsample(lr, weights, k: int = 3) -> Tensor:
    """Convex combination of sampled neighbourhoods.

    ``lr`` is ``[N, C, h, w]`` (or ``[N, h, w]``), ``weights`` ``[N, k*k, H, W]``
    with ``H = s*h`` and ``W = s*w``. Returns ``[N, C, H, W]`` (or ``[N, H, W]``).
    """
    lr, weights = T.as_tensor(lr), T.as_tensor(weights)
    if k % 2 == 0:
        raise ValueError(f"neighbourhood size must be odd, got {k}")
    h, w = lr.shape[-2:]
    H, W = weights.shape[-2:]
    if weights.shape[-3] != k * k:
        raise ValueError(f"weights carry {weights.shape[-3]} neighbours, expected {k * k}")
    if H % h or W % w or H // h != W // w:
        raise ValueError(f"upsampling factor mismatch: {h}x{w} -> {H}x{W}")
    patches = sample_patches(lr, H // h, k)
    if lr.ndim == 4:
        wts = T.reshape(weights, (weights.shape[0], 1) + weights.shape[1:])
        return T.sum(wts * patches, axis=2)
    return T.sum(weights * patches, axis=1)


@dataclass
class ChangeMap:
    """Probabilities and the binary mask (``prob > 0.5``; exactly 0.5 is unchanged)."""

    prob: np.ndarray
    mask: np.ndarray


def predict(logits) -> ChangeMap:
    prob = T.sigmoid(T.as_tensor(logits)).data
    return ChangeMap(prob, (prob > 0.5).astype(np.uint8))


class DecoderStage(Module):
    """Upsample, merge with the skip level, refine with three Titans blocks."""

    def __init__(self, dim: int, heads: int, tokens: int, rng: np.random.Generator, n_persistent: int = 4,
                 chunk: int = 64, memory_interval: Optional[int] = 3, second_order: bool = False,
                 n_blocks: int = 3, bias: bool = True):
        self.merge = Conv2d(2 * dim, dim, 1, rng, bias=bias)
        chunk = min(chunk, tokens)
        self.blocks = [
            TitansBlock(dim, heads, chunk, n_persistent, rng,
                        memory=bool(memory_interval) and (i % memory_interval == 0),
                        second_order=second_order)
            for i in range(1, n_blocks + 1)
        ]

    def forward(self, x, skip):
        h, w = skip.shape[-2:]
        z = self.merge(T.concat([T.bilinear_resize(x, h, w), skip], axis=-3))
        tokens = map_to_tokens(z)
        for blk in self.blocks:
            tokens = blk(tokens)
        return tokens_to_map(tokens, h, w)


class Decoder(Module):
    def __init__(self, dim: int, heads: int, shapes: Sequence, factor: int, rng: np.random.Generator,
                 out_channels: int = 64, n_persistent: int = 4, chunk: int = 64,
                 memory_interval: Optional[int] = 3, second_order: bool = False, k: int = 3,
                 upsample: str = "convex", bias: bool = True):
        if upsample not in ("convex", "bilinear"):
            raise ValueError(f"unknown upsampling {upsample!r}")
        self.shapes = [tuple(s) for s in shapes]
        self.factor, self.upsample = factor, upsample
        self.stages = [
            DecoderStage(dim, heads, h * w, rng, n_persistent, chunk, memory_interval, second_order, bias=bias)
            for h, w in reversed(self.shapes[:3])
        ]
        self.reduce = Conv2d(dim, out_channels, 1, rng, bias=bias)
        self.to_logit = Conv2d(out_channels, 1, 1, rng, bias=bias)
        self.head = ConvexHead(out_channels, factor, rng, k) if upsample == "convex" else None

    def decode(self, pyramid: Sequence[Tensor]) -> Tensor:
        """Coarsest level upward through three stages; returns ``[N, C', h1, w1]``."""
        got = [tuple(p.shape[-2:]) for p in pyramid]
        if got != self.shapes:
            raise ValueError(f"pyramid levels {got} do not match decoder scales {self.shapes}")
        x = pyramid[3]
        for stage, skip in zip(self.stages, (pyramid[2], pyramid[1], pyramid[0])):
            x = stage(x, skip)
        return self.reduce(x)

    def forward(self, pyramid: Sequence[Tensor]) -> Tensor:
        """Full-resolution change logits ``[N, H, W]``."""
        y_hat = self.decode(pyramid)
        lr = self.to_logit(y_hat)
        if self.upsample == "bilinear":
            h, w = lr.shape[-2:]
            out = T.bilinear_resize(lr, h * self.factor, w * self.factor)
        else:
            out = convex_upsample(lr, convex_weights(y_hat, self.head), self.head.k)
        return out[:, 0]


def decode(pyramid: Sequence[Tensor], decoder: Decoder) -> Tensor:
    return decoder.decode(pyramid)
