"""Full change-detection network: Siamese encoder + adapter, per-scale fusion, decoder."""

from __future__ import annotations

from dataclasses import replace
from typing import List

import numpy as np

from .. import tensor as T
from ..adapter import Adapter, build_pyramid, scale_shapes
from ..decoder import ChangeMap, Decoder, predict
from ..nn import Conv2d, Module
from ..tensor import Tensor
from ..tscbam import CbamParams
from ..vtitans import VTitansEncoder
from .config import ModelConfig


class SiamDiff(Module):
    """Baseline fusion: absolute feature difference."""

    def forward(self, f1, f2):
        return T.abs(f1 - f2)


class SiamConc(Module):
    """Baseline fusion: 1x1 conv on the concatenated streams."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.mix = Conv2d(2 * dim, dim, 1, rng)

    def forward(self, f1, f2):
        return self.mix(T.concat([f1, f2], axis=-3))


def baseline_fuse(f1, f2, kind: str, mixer: "SiamConc" = None) -> Tensor:
    """Non-attentive fusion used by the ablation baselines: ``siam_diff`` or ``siam_conc``."""
    if kind == "siam_diff":
        return SiamDiff()(f1, f2)
    if kind == "siam_conc":
        if mixer is None:
            raise ValueError("siam_conc fusion needs its 1x1 mixing layer")
        return mixer(f1, f2)
    raise ValueError(f"unknown baseline fusion {kind!r}")


class ChangeTitans(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        enc = cfg.encoder
        # independent streams per submodule: switching one part off leaves the others' init unchanged
        enc_rng, ad_rng, fuse_rng, dec_rng = (np.random.default_rng(s)
                                              for s in np.random.SeedSequence(cfg.seed).spawn(4))
        self.early = cfg.fusion == "early"
        in_ch = 2 * enc.in_channels if self.early else enc.in_channels
        if self.early:
            enc = replace(enc, in_channels=in_ch)
        self.shapes = scale_shapes(cfg.image_size, cfg.image_size, enc.patch)
        self.grid = self.shapes[2]
        self.encoder = VTitansEncoder(enc, self.grid[0] * self.grid[1], enc_rng, bias=cfg.bias)
        self.adapter = (Adapter(in_ch, enc.dim, enc.patch, enc.heads, ad_rng, bias=cfg.bias,
                                cffn_ratio=cfg.cffn_ratio) if cfg.adapter else None)
        if cfg.fusion in ("sum", "diff", "conv"):
            self.fusers = [CbamParams(enc.dim, fuse_rng, cfg.fusion) for _ in range(4)]
        elif cfg.fusion == "siam_diff":
            self.fusers = [SiamDiff() for _ in range(4)]
        elif cfg.fusion == "siam_conc":
            self.fusers = [SiamConc(enc.dim, fuse_rng) for _ in range(4)]
        else:
            self.fusers = []
        self.decoder = Decoder(enc.dim, enc.heads, self.shapes, enc.patch // 4, dec_rng,
                               out_channels=cfg.decoder_channels, n_persistent=enc.n_persistent,
                               chunk=cfg.decoder_chunk, memory_interval=enc.memory_interval,
                               second_order=enc.second_order, upsample=cfg.upsample, bias=cfg.bias)
        self.assign_paths()
        self.set_memory(cfg.memory)

    def features(self, image) -> List[Tensor]:
        """Four pyramid levels ``[N, C, h_j, w_j]`` for a batch of images (each with its own memory)."""
        taps = self.encoder(image)
        if self.adapter is not None:
            return self.adapter(image, taps)
        return build_pyramid(taps, None, self.grid, self.shapes)

    def fused(self, x1, x2) -> List[Tensor]:
        x1, x2 = T.as_tensor(x1), T.as_tensor(x2)
        if self.early:
            return self.features(T.concat([x1, x2], axis=1))
        n = x1.shape[0]
        # both temporal streams in one batch: weights shared, memory states independent per sample
        levels = self.features(T.concat([x1, x2], axis=0))
        return [fuse(lv[:n], lv[n:]) for fuse, lv in zip(self.fusers, levels)]

    def forward(self, x1, x2) -> Tensor:
        """Change logits ``[N, H, W]`` for image batches ``[N, C, H, W]``."""
        x1, x2 = T.as_tensor(x1), T.as_tensor(x2)
        if x1.shape != x2.shape:
            raise ValueError(f"image shapes differ: {x1.shape} vs {x2.shape}")
        size = self.cfg.image_size
        if x1.ndim != 4 or x1.shape[-2:] != (size, size) or x1.shape[1] != self.cfg.encoder.in_channels:
            raise ValueError(f"expected [N, {self.cfg.encoder.in_channels}, {size}, {size}], got {x1.shape}")
        return self.decoder(self.fused(x1, x2))

    def predict(self, x1, x2) -> ChangeMap:
        with T.no_grad():
            return predict(self.forward(x1, x2))

    def set_memory(self, enabled: bool) -> None:
        """Switch every neural memory on or off without changing parameters."""
        for _, mod in self.named_modules():
            if hasattr(mod, "use_memory"):
                mod.use_memory = enabled


def forward(pair, model: ChangeTitans) -> ChangeMap:
    """Change map for one image pair ``(x1, x2)`` of ``[C, H, W]`` arrays (or a batch)."""
    x1, x2 = (np.asarray(getattr(a, "data", a), dtype=T.DTYPE) for a in pair)
    single = x1.ndim == 3
    if single:
        x1, x2 = x1[None], x2[None]
    out = model.predict(x1, x2)
    return ChangeMap(out.prob[0], out.mask[0]) if single else out
