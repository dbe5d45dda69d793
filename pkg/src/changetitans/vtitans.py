"""VTitans encoder: patch tokens through stacked chunked-attention blocks with neural memory."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import tensor as T
from .memory import MemoryState, NeuralMemory
from .nn import FeedForward, LayerNorm, Linear, Module, Parameter, attention
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 12
    dim: int = 192
    patch: int = 16
    chunk: int = 64
    n_persistent: int = 4
    heads: int = 3
    memory_interval: Optional[int] = 3
    in_channels: int = 3
    second_order: bool = False

    def __post_init__(self):
        if self.depth % 4:
            raise ValueError(f"depth must be divisible by 4 for the feature taps, got {self.depth}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.chunk < 1 or self.n_persistent < 0:
            raise ValueError("chunk must be >= 1 and n_persistent >= 0")

    @property
    def taps(self) -> Tuple[int, ...]:
        """1-based block indices whose outputs are tapped."""
        q = self.depth // 4
        return (q, 2 * q, 3 * q, 4 * q)

    def has_memory(self, layer: int) -> bool:
        """Whether 1-based ``layer`` carries neural memory."""
        return bool(self.memory_interval) and layer % self.memory_interval == 0


def patchify(image, patch: int) -> Tensor:
    """``[N, C, H, W] -> [N, T, p*p*C]`` in row-major patch order."""
    n, c, h, w = image.shape
    if h % patch or w % patch:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch}")
    x = T.reshape(image, (n, c, h // patch, patch, w // patch, patch))
    x = T.transpose(x, (0, 2, 4, 3, 5, 1))
    return T.reshape(x, (n, (h // patch) * (w // patch), patch * patch * c))


def tokens_to_map(tokens, height: int, width: int) -> Tensor:
    """``[N, h*w, C] -> [N, C, h, w]``."""
    n, _, c = tokens.shape
    return T.transpose(T.reshape(tokens, (n, height, width, c)), (0, 3, 1, 2))


def map_to_tokens(fmap) -> Tensor:
    """``[N, C, h, w] -> [N, h*w, C]``."""
    n, c, h, w = fmap.shape
    return T.reshape(T.transpose(fmap, (0, 2, 3, 1)), (n, h * w, c))


class PatchEmbedder(Module):
    def __init__(self, in_channels: int, patch: int, dim: int, max_tokens: int,
                 rng: np.random.Generator, bias: bool = True):
        self.patch = patch
        self.proj = Linear(patch * patch * in_channels, dim, rng, bias=bias)
        self.pos = Parameter(rng.normal(0.0, 0.02, (max_tokens, dim)))

    def forward(self, image) -> Tensor:
        tokens = self.proj(patchify(image, self.patch))
        n_tok = tokens.shape[1]
        if n_tok > self.pos.shape[0]:
            raise ValueError(f"{n_tok} tokens exceed positional table of {self.pos.shape[0]}")
        return tokens + self.pos[:n_tok]


def embed(image, embedder: PatchEmbedder) -> Tensor:
    """Patch tokens plus positional encodings; accepts ``[C,H,W]`` or ``[N,C,H,W]``."""
    image = T.as_tensor(image)
    if image.ndim == 3:
        return embedder(T.reshape(image, (1,) + image.shape))[0]
    return embedder(image)


class TitansBlock(Module):
    """Pre-norm block: chunked attention over ``[P | h_t | S_t]``, memory gating, then a 4x MLP.

    For chunk ``S_t`` the block retrieves ``h_t = M_{t-1}(S_t W_q)``, attends
    with queries from ``S_t`` only, updates the memory on the attention
    output ``m_t`` and emits ``o_t = m_t * M_t(m_t)``. Blocks without memory
    emit ``o_t = m_t``.
    """

    def __init__(self, dim: int, heads: int, chunk: int, n_persistent: int, rng: np.random.Generator,
                 memory: bool = False, second_order: bool = False):
        self.dim, self.heads, self.chunk = dim, heads, chunk
        self.norm1 = LayerNorm(dim)
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.persistent = Parameter(rng.normal(0.0, 0.02, (n_persistent, dim))) if n_persistent else None
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, 4 * dim, rng)
        self.memory = NeuralMemory(dim, rng, second_order=second_order) if memory else None
        self.use_memory = True

    @property
    def memory_active(self) -> bool:
        return self.memory is not None and self.use_memory

    def _context(self, s: Tensor, h: Optional[Tensor]) -> Tensor:
        parts = []
        if self.persistent is not None:
            lead = s.shape[:-2]
            parts.append(T.broadcast_to(self.persistent, lead + self.persistent.shape))
        if h is not None:
            parts.append(h)
        parts.append(s)
        return T.concat(parts, axis=-2)

    def run_chunks(self, tokens, state: Optional[MemoryState] = None, return_weights: bool = False):
        """Process chunks in order; returns ``(m, o, final_state, weights)``.

        ``m`` is the attention output and ``o`` the memory-gated output, both
        ``[..., T, C]``. ``weights`` is a per-chunk list when requested.
        """
        tokens = T.as_tensor(tokens)
        normed = self.norm1(tokens)
        n_tok = tokens.shape[-2]
        mem = self.memory if self.memory_active else None
        hyper = None
        if mem is not None:
            hyper = mem.hyper()
            state = state if state is not None else mem.initial_state()
        ms, os_, ws = [], [], []
        for start in range(0, n_tok, self.chunk):
            s = normed[..., start:start + self.chunk, :]
            h = mem.retrieve(state, hyper, s) if mem is not None else None
            ctx = self._context(s, h)
            att = attention(self.q(s), self.k(ctx), self.v(ctx), self.heads, return_weights)
            if return_weights:
                att, w = att
                ws.append(w)
            m = self.proj(att)
            if mem is not None:
                state = mem.update(state, hyper, m)
                o = m * state.mlp(m)
            else:
                o = m
            ms.append(m)
            os_.append(o)
        return T.concat(ms, axis=-2), T.concat(os_, axis=-2), state, ws

    def forward(self, tokens, state: Optional[MemoryState] = None) -> Tensor:
        _, o, _, _ = self.run_chunks(tokens, state)
        x = T.as_tensor(tokens) + o
        return x + self.ffn(self.norm2(x))


def chunked_attention(tokens, block: TitansBlock, state: Optional[MemoryState] = None,
                      return_weights: bool = False):
    """Attention outputs ``m`` for every chunk (memory read and written along the way)."""
    m, _, _, ws = block.run_chunks(tokens, state, return_weights)
    return (m, ws) if return_weights else m


def block_forward(tokens, block: TitansBlock, state: Optional[MemoryState] = None):
    """Full block output and the memory state after the last chunk."""
    _, o, final, _ = block.run_chunks(tokens, state)
    x = T.as_tensor(tokens) + o
    return x + block.ffn(block.norm2(x)), final


class VTitansEncoder(Module):
    def __init__(self, cfg: EncoderConfig, max_tokens: int, rng: np.random.Generator, bias: bool = True):
        self.cfg = cfg
        self.embedder = PatchEmbedder(cfg.in_channels, cfg.patch, cfg.dim, max_tokens, rng, bias=bias)
        self.blocks = [
            TitansBlock(cfg.dim, cfg.heads, cfg.chunk, cfg.n_persistent, rng,
                        memory=cfg.has_memory(i + 1), second_order=cfg.second_order)
            for i in range(cfg.depth)
        ]

    def forward(self, image) -> List[Tensor]:
        x = embed(image, self.embedder)
        taps = []
        tap_layers = set(self.cfg.taps)
        for i, blk in enumerate(self.blocks, start=1):
            x = blk(x)  # fresh memory state per image: every call starts from the learned initial memory
            if i in tap_layers:
                taps.append(x)
        return taps


def encode(image, encoder: VTitansEncoder) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    """Feature taps after blocks L/4, L/2, 3L/4 and L, each ``[..., T, C]``."""
    return tuple(encoder(image))
