"""Synthetic change pairs, flip/rot90 augmentation and the A/B/label image-directory layout."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np
from PIL import Image

SUFFIXES = (".ppm", ".pgm")


@dataclass
class SamplePair:
    """Co-registered images ``[C, H, W]`` in [0, 1] and the binary change mask ``[H, W]``."""

    x1: np.ndarray
    x2: np.ndarray
    mask: np.ndarray
    ident: str = ""


def _texture(rng: np.random.Generator, size: int, channels: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = rng.uniform(0.25, 0.6, (channels, 1, 1))
    tex = np.zeros((channels, size, size))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 3.0, 2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.03, 0.08, (channels, 1, 1))
        tex += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    return base + tex + rng.normal(0.0, 0.02, (channels, size, size))


def _shape_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    lo, hi = max(3, size // 8), max(4, size // 3)
    if rng.random() < 0.5:
        h, w = rng.integers(lo, hi + 1, 2)
        r0, c0 = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        return (yy >= r0) & (yy < r0 + h) & (xx >= c0) & (xx < c0 + w)
    rad = rng.uniform(lo / 2, hi / 2)
    cy, cx = rng.uniform(rad, size - rad, 2)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad


def synth_pair(seed: int, size: int = 32, n_objects: int = 3, channels: int = 3) -> SamplePair:
    """Textured background with rectangles/discs inserted into or deleted from the second frame.

    Frame 2 also gets a mild global gain/offset and fresh sensor noise, so
    unchanged pixels differ slightly and the network cannot rely on exact
    equality. The mask is the union of all changed object footprints.
    """
    if size < 32 or size % 32 or n_objects < 0:
        raise ValueError(f"need size >= 32 divisible by 32 and n_objects >= 0, got {size}, {n_objects}")
    rng = np.random.default_rng(seed)
    bg = _texture(rng, size, channels)
    x1, x2 = bg.copy(), bg.copy()
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(n_objects):
        obj = _shape_mask(rng, size)
        colour = rng.uniform(0.0, 1.0, channels)
        # keep objects visibly distinct from the background mean
        colour = np.where(np.abs(colour - bg.mean(axis=(1, 2))) < 0.25, 1.0 - colour, colour)
        target = x2 if rng.random() < 0.5 else x1
        target[:, obj] = colour[:, None] + rng.normal(0.0, 0.02, (channels, int(obj.sum())))
        mask |= obj
    gain, offset = rng.uniform(0.9, 1.1), rng.uniform(-0.05, 0.05)
    x2 = gain * x2 + offset + rng.normal(0.0, 0.01, x2.shape)
    return SamplePair(np.clip(x1, 0, 1), np.clip(x2, 0, 1), mask.astype(np.uint8), f"synth{seed:05d}")


def synth_dataset(n: int, seed: int = 0, size: int = 32, n_objects: int = 3, channels: int = 3) -> List[SamplePair]:
    return [synth_pair(seed * 100003 + i, size, n_objects, channels) for i in range(n)]


def augment(pair: SamplePair, rng: np.random.Generator) -> SamplePair:
    """Identical random flips and rot90 on both frames and the mask."""
    x1, x2, m = pair.x1, pair.x2, pair.mask
    if rng.random() < 0.5:
        x1, x2, m = x1[..., ::-1], x2[..., ::-1], m[..., ::-1]
    if rng.random() < 0.5:
        x1, x2, m = x1[..., ::-1, :], x2[..., ::-1, :], m[..., ::-1, :]
    k = int(rng.integers(0, 4))
    x1, x2, m = (np.ascontiguousarray(np.rot90(a, k, axes=(-2, -1))) for a in (x1, x2, m))
    return SamplePair(x1, x2, m, pair.ident)


def stack(pairs: Sequence[SamplePair]):
    """Batch arrays ``(x1 [N,C,H,W], x2, masks [N,H,W] float)``."""
    return (np.stack([p.x1 for p in pairs]), np.stack([p.x2 for p in pairs]),
            np.stack([p.mask for p in pairs]).astype(np.float64))


# ---------------------------------------------------------------- image IO
def read_image(path) -> np.ndarray:
    """``[C, H, W]`` float64 in [0, 1] (grey images get one channel)."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    scale = 65535.0 if arr.dtype == np.uint16 else 255.0
    arr = arr.astype(np.float64) / scale
    return arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr[0] if arr.shape[0] == 1 else np.moveaxis(arr, 0, -1)).save(path)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)


def _find(folder: Path, stem: str) -> Path:
    for suf in SUFFIXES:
        cand = folder / f"{stem}{suf}"
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no image named {stem} in {folder}")


def list_ids(root) -> List[str]:
    folder = Path(root) / "A"
    if not folder.is_dir():
        raise FileNotFoundError(f"{root} has no A/ directory")
    return sorted(p.stem for p in folder.iterdir() if p.suffix.lower() in SUFFIXES)


def read_pair(root, ident: str, labels: bool = True) -> SamplePair:
    root = Path(root)
    x1, x2 = read_image(_find(root / "A", ident)), read_image(_find(root / "B", ident))
    mask = read_mask(_find(root / "label", ident)) if labels else np.zeros(x1.shape[-2:], np.uint8)
    return SamplePair(x1, x2, mask, ident)


def read_dataset(root, labels: bool = True) -> List[SamplePair]:
    return [read_pair(root, i, labels) for i in list_ids(root)]


def write_dataset(root, pairs: Sequence[SamplePair]) -> None:
    """Write ``A/<id>.ppm``, ``B/<id>.ppm`` and ``label/<id>.pgm``."""
    root = Path(root)
    for sub in ("A", "B", "label"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for p in pairs:
        ext = ".pgm" if p.x1.shape[0] == 1 else ".ppm"
        write_image(root / "A" / f"{p.ident}{ext}", p.x1)
        write_image(root / "B" / f"{p.ident}{ext}", p.x2)
        write_mask(root / "label" / f"{p.ident}.pgm", p.mask)
