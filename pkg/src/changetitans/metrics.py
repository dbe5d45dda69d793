"""Pixel and boundary metrics for binary change masks.

Boundary pixels are mask pixels with at least one 4-neighbour outside the
mask or lying on the image border. The fast paths use exact Euclidean
distance transforms; every metric also has a ``*_bruteforce`` twin that
compares all pixel pairs directly and is the normative definition.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Tuple

import numpy as np
from scipy import ndimage

CSV_VERSION = "changetitans-metrics v1"
CSV_COLUMNS = ("id", "precision", "recall", "f1", "iou", "bf1", "trimap_miou", "hausdorff",
               "tp", "fp", "fn", "tn", "tau", "trimap_width", "degenerate")

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class PixelMetrics:
    precision: float
    recall: float
    f1: float
    iou: float
    degenerate: bool = False


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    iou: float
    bf1: float
    trimap_miou: float
    hausdorff: float
    tau: float
    trimap_width: float
    counts: ConfusionCounts
    degenerate: List[str] = field(default_factory=list)

    def to_text(self) -> str:
        rows = {k: v for k, v in asdict(self).items() if k not in ("counts", "degenerate")}
        rows.update(asdict(self.counts))
        rows["degenerate"] = ",".join(self.degenerate) or "none"
        return "".join(f"{k}={v}\n" for k, v in rows.items())

    def csv_row(self, ident: str) -> list:
        c = self.counts
        return [ident, self.precision, self.recall, self.f1, self.iou, self.bf1, self.trimap_miou,
                self.hausdorff, c.tp, c.fp, c.fn, c.tn, self.tau, self.trimap_width,
                "|".join(self.degenerate)]


def _binary(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D mask, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} contains values other than 0 and 1")
    return arr.astype(bool)


def _pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    p, g = _binary(pred, "pred"), _binary(gt, "gt")
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    return p, g


# ------------------------------------------------------------- pixel level
def confusion(pred, gt) -> ConfusionCounts:
    p, g = _pair(pred, gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def confusion_bruteforce(pred, gt) -> ConfusionCounts:
    p, g = _pair(pred, gt)
    tp = fp = fn = tn = 0
    for a, b in zip(p.ravel().tolist(), g.ravel().tolist()):
        if a and b:
            tp += 1
        elif a:
            fp += 1
        elif b:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def pixel_metrics(counts: ConfusionCounts) -> PixelMetrics:
    """Precision, recall, F1 and IoU of the change class.

    Any 0/0 ratio is reported as 0 with ``degenerate`` set, except when both
    masks are empty: everything is then 1 by convention.
    """
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    if tp + fp + fn == 0:
        return PixelMetrics(1.0, 1.0, 1.0, 1.0, degenerate=True)
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PixelMetrics(precision, recall, f1, tp / (tp + fp + fn), degenerate)


# ----------------------------------------------------------------- boundary
def boundary(mask) -> np.ndarray:
    m = _binary(mask, "mask")
    return m & ~ndimage.binary_erosion(m, structure=_CROSS, border_value=0)


def boundary_bruteforce(mask) -> np.ndarray:
    m = _binary(mask, "mask")
    h, w = m.shape
    out = np.zeros_like(m)
    for r in range(h):
        for c in range(w):
            if not m[r, c]:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w) or not m[rr, cc]:
                    out[r, c] = True
                    break
    return out


def _nearest_sq(targets: np.ndarray) -> np.ndarray:
    """Integer squared distance from every pixel to the nearest ``True`` pixel of ``targets``."""
    _, (ri, ci) = ndimage.distance_transform_edt(~targets, return_indices=True)
    rr, cc = np.indices(targets.shape)
    return (rr - ri) ** 2 + (cc - ci) ** 2


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def boundary_f1(pred, gt, tau: float = 2.0) -> float:
    p, g = _pair(pred, gt)
    bp, bg = boundary(p), boundary(g)
    if not bp.any() and not bg.any():
        return 1.0
    if not bp.any() or not bg.any():
        return 0.0
    t2 = tau * tau
    precision = np.count_nonzero(_nearest_sq(bg)[bp] <= t2) / np.count_nonzero(bp)
    recall = np.count_nonzero(_nearest_sq(bp)[bg] <= t2) / np.count_nonzero(bg)
    return _f1(precision, recall)


def _points(mask: np.ndarray) -> List[Tuple[int, int]]:
    return list(zip(*[ix.tolist() for ix in np.nonzero(mask)]))


def _min_sq(point, others) -> int:
    r, c = point
    return min((r - a) ** 2 + (c - b) ** 2 for a, b in others)


def boundary_f1_bruteforce(pred, gt, tau: float = 2.0) -> float:
    p, g = _pair(pred, gt)
    bp, bg = _points(boundary_bruteforce(p)), _points(boundary_bruteforce(g))
    if not bp and not bg:
        return 1.0
    if not bp or not bg:
        return 0.0
    hit_p = sum(1 for q in bp if math.sqrt(_min_sq(q, bg)) <= tau)
    hit_g = sum(1 for q in bg if math.sqrt(_min_sq(q, bp)) <= tau)
    return _f1(hit_p / len(bp), hit_g / len(bg))


def _band_miou(p: np.ndarray, g: np.ndarray, band: np.ndarray) -> float:
    pb, gb = p[band], g[band]
    tp = np.count_nonzero(pb & gb)
    tn = np.count_nonzero(~pb & ~gb)
    err = np.count_nonzero(pb != gb)
    fg = tp / (tp + err) if tp + err else 1.0
    bgd = tn / (tn + err) if tn + err else 1.0
    return (fg + bgd) / 2.0


def trimap_band(gt, width: float = 3.0) -> np.ndarray:
    """Pixels within Euclidean distance ``width`` of a ground-truth boundary pixel."""
    bg = boundary(gt)
    if not bg.any():
        return np.zeros_like(bg)
    return _nearest_sq(bg) <= width * width


def trimap_miou(pred, gt, width: float = 3.0) -> float:
    """Mean of change-class and background IoU inside the trimap band; 1.0 when the band is empty."""
    if width < 1:
        raise ValueError(f"trimap width must be >= 1, got {width}")
    p, g = _pair(pred, gt)
    band = trimap_band(g, width)
    if not band.any():
        return 1.0
    return _band_miou(p, g, band)


def trimap_miou_bruteforce(pred, gt, width: float = 3.0) -> float:
    p, g = _pair(pred, gt)
    bg = _points(boundary_bruteforce(g))
    if not bg:
        return 1.0
    tp = tn = err = 0
    for r in range(p.shape[0]):
        for c in range(p.shape[1]):
            if math.sqrt(_min_sq((r, c), bg)) > width:
                continue
            if p[r, c] and g[r, c]:
                tp += 1
            elif not p[r, c] and not g[r, c]:
                tn += 1
            else:
                err += 1
    fg = tp / (tp + err) if tp + err else 1.0
    bgd = tn / (tn + err) if tn + err else 1.0
    return (fg + bgd) / 2.0


def hausdorff(pred, gt) -> float:
    """Symmetric Hausdorff distance between boundary sets; ``inf`` when exactly one set is empty."""
    p, g = _pair(pred, gt)
    bp, bg = boundary(p), boundary(g)
    if not bp.any() and not bg.any():
        return 0.0
    if not bp.any() or not bg.any():
        return math.inf
    worst = max(_nearest_sq(bg)[bp].max(), _nearest_sq(bp)[bg].max())
    return math.sqrt(int(worst))


def hausdorff_bruteforce(pred, gt) -> float:
    p, g = _pair(pred, gt)
    bp, bg = _points(boundary_bruteforce(p)), _points(boundary_bruteforce(g))
    if not bp and not bg:
        return 0.0
    if not bp or not bg:
        return math.inf
    forward = max(math.sqrt(_min_sq(q, bg)) for q in bp)
    backward = max(math.sqrt(_min_sq(q, bp)) for q in bg)
    return max(forward, backward)


def evaluate(pred, gt, tau: float = 2.0, trimap_width: float = 3.0) -> MetricReport:
    counts = confusion(pred, gt)
    pm = pixel_metrics(counts)
    degenerate = ["pixel"] if pm.degenerate else []
    if not trimap_band(gt, trimap_width).any():
        degenerate.append("trimap")
    return MetricReport(pm.precision, pm.recall, pm.f1, pm.iou, boundary_f1(pred, gt, tau),
                        trimap_miou(pred, gt, trimap_width), hausdorff(pred, gt), tau, trimap_width,
                        counts, degenerate)
