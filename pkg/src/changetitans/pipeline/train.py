"""Optimisers, gradient clipping, the training loop and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .. import tensor as T
from ..metrics import confusion, pixel_metrics
from ..nn import NumericError, detect_anomaly
from ..objectives import total_loss
from ..tensor import io as tio
from .config import ConfigError, ModelConfig, TrainConfig, config_hash, format_config, parse_config
from .data import SamplePair, augment, stack
from .model import ChangeTitans


class SGD:
    """Momentum SGD (heavy ball, ``v = mu v + g``) with optional decoupled weight decay."""

    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params, self.lr, self.momentum, self.wd = list(params), lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.velocity[i] = self.momentum * self.velocity[i] + p.grad
            # rebind rather than mutate: tensors recorded on an old tape stay valid
            p.data = p.data - self.lr * (self.velocity[i] + self.wd * p.data)


class Adam:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params, self.lr, self.betas, self.eps, self.wd = list(params), lr, betas, eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * p.grad
            self.v[i] = b2 * self.v[i] + (1 - b2) * p.grad ** 2
            upd = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = p.data - self.lr * (upd + self.wd * p.data)


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate, weight_decay=cfg.weight_decay)
    return SGD(params, cfg.learning_rate, cfg.momentum, cfg.weight_decay)


def clip_grad_norm(params, max_norm: Optional[float]) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the norm before clipping."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class TrainResult:
    losses: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    f1: List[tuple] = field(default_factory=list)  # (step, training F1)
    steps: int = 0


def loss_on(model: ChangeTitans, batch: Sequence[SamplePair]):
    x1, x2, target = stack(batch)
    prob = T.sigmoid(model(x1, x2))
    return total_loss(prob, target, model.cfg.loss)


def training_f1(model: ChangeTitans, pairs: Sequence[SamplePair]) -> float:
    """F1 of the change class pooled over every pixel of ``pairs``."""
    x1, x2, target = stack(pairs)
    pred = model.predict(x1, x2).mask
    return pixel_metrics(confusion(pred.reshape(-1, pred.shape[-1]),
                                   target.astype(np.uint8).reshape(-1, pred.shape[-1]))).f1


def _locate_nan(model: ChangeTitans, batch) -> NumericError:
    try:
        with T.no_grad(), detect_anomaly():
            x1, x2, _ = stack(batch)
            model(x1, x2)
    except NumericError as exc:
        return exc
    return NumericError("non-finite loss with finite network outputs (loss or gradient overflow)")


def train(model: ChangeTitans, pairs: Sequence[SamplePair], cfg: TrainConfig, seed: int = 0,
          stop_f1: Optional[float] = None, eval_every: int = 0,
          callback: Optional[Callable[[int, float], None]] = None, optimizer=None) -> TrainResult:
    """Run ``cfg.steps`` optimisation steps on ``pairs``.

    Batches cycle through a seeded permutation of the data (all of it when
    ``batch_size >= len(pairs)``). With ``eval_every > 0`` the training F1 is
    recorded every ``eval_every`` steps and training stops early once it
    exceeds ``stop_f1``. A non-finite loss raises :class:`NumericError`
    naming the offending module.
    """
    if not pairs:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    params = model.parameters()
    opt = optimizer or make_optimizer(params, cfg)
    res = TrainResult()
    bs = min(cfg.batch_size, len(pairs))
    order, cursor = rng.permutation(len(pairs)), 0
    for step in range(1, cfg.steps + 1):
        if bs == len(pairs):
            batch = list(pairs)
        else:
            if cursor + bs > len(order):
                order, cursor = rng.permutation(len(pairs)), 0
            batch = [pairs[i] for i in order[cursor:cursor + bs]]
            cursor += bs
        if cfg.augment:
            batch = [augment(p, rng) for p in batch]
        model.zero_grad()
        loss = loss_on(model, batch)
        value = float(loss.data)
        if not np.isfinite(value):
            raise _locate_nan(model, batch)
        loss.backward()
        res.grad_norms.append(clip_grad_norm(params, cfg.gradient_clipping))
        opt.step()
        res.losses.append(value)
        res.steps = step
        if callback is not None:
            callback(step, value)
        if eval_every and step % eval_every == 0:
            f1 = training_f1(model, pairs)
            res.f1.append((step, f1))
            if stop_f1 is not None and f1 > stop_f1:
                break
    model.zero_grad()
    return res


# ---------------------------------------------------------------- checkpoints
MANIFEST = "manifest.json"


def save_checkpoint(path, model: ChangeTitans, step: int = 0, extra: Optional[Dict] = None) -> Path:
    """Directory with one TCDT file per parameter, the config text and a JSON manifest."""
    root = Path(path)
    (root / "tensors").mkdir(parents=True, exist_ok=True)
    names = []
    for i, (name, p) in enumerate(model.named_parameters()):
        fname = f"{i:04d}.tcdt"
        tio.save(root / "tensors" / fname, p.data)
        names.append({"name": name, "file": fname, "shape": list(p.shape)})
    (root / "config.txt").write_text(format_config(model.cfg))
    manifest = {"format": "changetitans-checkpoint v1", "config_hash": config_hash(model.cfg),
                "step": int(step), "tensors": names, "extra": extra or {}}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1))
    return root


def load_checkpoint(path) -> tuple:
    """Rebuild the model from a checkpoint directory; returns ``(model, manifest)``."""
    root = Path(path)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
        model_cfg, _ = parse_config((root / "config.txt").read_text(), base=ModelConfig())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"unreadable checkpoint {root}: {exc}") from exc
    if config_hash(model_cfg) != manifest["config_hash"]:
        raise ConfigError(f"checkpoint config hash mismatch in {root}")
    model = ChangeTitans(model_cfg)
    state = {}
    for entry in manifest["tensors"]:
        arr = tio.load(root / "tensors" / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise ConfigError(f"{entry['name']}: stored shape {arr.shape} != manifest {entry['shape']}")
        state[entry["name"]] = arr
    model.load_state_dict(state)
    return model, manifest
