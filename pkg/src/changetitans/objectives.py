"""Hybrid BCE + Dice training loss on predicted change probabilities."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .tensor import Tensor

CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    eps: float = 1.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"dice epsilon must be positive, got {self.eps}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


def _check(pred, target):
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    return pred, target


def bce(pred, target) -> Tensor:
    """Mean binary cross-entropy over all pixels; predictions clamped to [1e-7, 1 - 1e-7]."""
    pred, target = _check(pred, target)
    p = T.clamp(pred, CLAMP, 1.0 - CLAMP)
    ll = target * T.log(p) + (1.0 - target) * T.log(1.0 - p)
    return -T.mean(ll)


def dice(pred, target, eps: float = 1.0) -> Tensor:
    """``1 - (2 sum(p t) + eps) / (sum p + sum t + eps)`` over the last two axes, averaged over the rest."""
    pred, target = _check(pred, target)
    inter = T.sum(pred * target, axis=(-2, -1))
    denom = T.sum(pred, axis=(-2, -1)) + T.sum(target, axis=(-2, -1))
    return T.mean(1.0 - (2.0 * inter + eps) / (denom + eps))


def total_loss(pred, target, cfg: LossConfig = LossConfig()) -> Tensor:
    """``bce + lam * dice``; with ``lam == 0`` the BCE tensor itself is returned."""
    loss = bce(pred, target)
    if cfg.lam == 0:
        return loss
    return loss + cfg.lam * dice(pred, target, cfg.eps)
