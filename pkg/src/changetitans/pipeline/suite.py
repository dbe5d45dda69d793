"""The finite-difference oracle suite: every differentiable op plus the composite modules."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import scipy.sparse as sp

from .. import tensor as T
from ..adapter import AdapterStage, extract, inject
from ..decoder import Decoder, convex_upsample
from ..memory import MemoryHyper, MemoryMLP, MemoryState, memory_retrieve, memory_update
from ..objectives import LossConfig, total_loss
from ..tensor import Tensor, grad_check
from ..tscbam import CbamParams, fuse
from ..vtitans import TitansBlock

OP_TOL = 1e-4
SCALAR_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tol)


def _proj(out, seed: int = 7) -> Tensor:
    r = np.random.default_rng(seed).normal(size=out.shape)
    return T.sum(out * r)


def _leaf(rng, shape, lo=None, hi=None) -> Tensor:
    data = rng.normal(size=shape) if lo is None else rng.uniform(lo, hi, shape)
    return Tensor(data, requires_grad=True)


def _op_cases(rng) -> List[Tuple[str, Callable, list]]:
    a, b = _leaf(rng, (2, 3, 4)), _leaf(rng, (3, 1), 0.5, 1.5)
    pos = _leaf(rng, (3, 4), 0.5, 2.0)
    away = Tensor(rng.choice([-1.0, 1.0], (6,)) * rng.uniform(0.2, 1.0, 6), requires_grad=True)
    m1, m2 = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4, 5))
    w = _leaf(rng, (4, 5))
    x4, k4, bias = _leaf(rng, (1, 2, 5, 5)), _leaf(rng, (3, 2, 3, 3)), _leaf(rng, (3,))
    x6 = _leaf(rng, (1, 2, 6, 6))
    dw = _leaf(rng, (2, 1, 3, 3))
    lnw, lnb = _leaf(rng, (4,)), _leaf(rng, (4,))
    mat = sp.random(6, 4, density=0.5, random_state=3, format="csr")
    clamp_in = Tensor(rng.uniform(0.1, 0.9, (5,)), requires_grad=True)
    return [
        ("add", lambda: T.add(a, b), [a, b]),
        ("sub", lambda: T.sub(a, b), [a, b]),
        ("mul", lambda: T.mul(a, b), [a, b]),
        ("div", lambda: T.div(a, b), [a, b]),
        ("neg", lambda: T.neg(a), [a]),
        ("power", lambda: T.power(pos, 1.5), [pos]),
        ("exp", lambda: T.exp(a), [a]),
        ("log", lambda: T.log(pos), [pos]),
        ("sqrt", lambda: T.sqrt(pos), [pos]),
        ("tanh", lambda: T.tanh(a), [a]),
        ("sigmoid", lambda: T.sigmoid(a), [a]),
        ("softplus", lambda: T.softplus(a), [a]),
        ("silu", lambda: T.silu(a), [a]),
        ("relu", lambda: T.relu(away), [away]),
        ("abs", lambda: T.abs(away), [away]),
        ("clamp", lambda: T.clamp(clamp_in, 0.0, 1.0), [clamp_in]),
        ("sum", lambda: T.sum(a, axis=1), [a]),
        ("mean", lambda: T.mean(a, axis=(0, 2)), [a]),
        ("max", lambda: T.max(a, axis=-1), [a]),
        ("reshape", lambda: T.reshape(a, (6, 4)), [a]),
        ("transpose", lambda: T.transpose(a, (2, 0, 1)), [a]),
        ("swapaxes", lambda: T.swapaxes(a, 0, 2), [a]),
        ("getitem", lambda: a[:, 1:, ::2], [a]),
        ("take", lambda: T.take(a, np.array([0, 2, 2]), axis=1), [a]),
        ("concat", lambda: T.concat([a, a * 2.0], axis=1), [a]),
        ("stack", lambda: T.stack([a, b * a], axis=0), [a, b]),
        ("broadcast_to", lambda: T.broadcast_to(b, (2, 3, 4)), [b]),
        ("matmul", lambda: T.matmul(m1, m2), [m1, m2]),
        ("matmul_shared", lambda: T.matmul(m1, w), [m1, w]),
        ("softmax", lambda: T.softmax(a, axis=-1), [a]),
        ("layer_norm", lambda: T.layer_norm(m1, lnw, lnb), [m1, lnw, lnb]),
        ("sparse_apply", lambda: T.sparse_apply(pos, mat), [pos]),
        ("conv2d", lambda: T.conv2d(x4, k4, bias, 1, 1), [x4, k4, bias]),
        ("conv2d_stride2", lambda: T.conv2d(x6, k4, bias, 2, (0, 1, 0, 1)), [x6, k4, bias]),
        ("depthwise_conv2d", lambda: T.depthwise_conv2d(x4, dw, None, 1, 1), [x4, dw]),
        ("pad2d_reflect", lambda: T.pad2d(x4, 1, mode="reflect"), [x4]),
        ("pool_spatial", lambda: T.pool_spatial(x4, "max") + T.pool_spatial(x4, "avg"), [x4]),
        ("pool_channel", lambda: T.pool_channel(x4, "max") + T.pool_channel(x4, "avg"), [x4]),
        ("bilinear_resize", lambda: T.bilinear_resize(x4, 7, 3), [x4]),
    ]


def _memory_step(rng):
    d, h = 4, 5
    ps = [_leaf(rng, s) for s in ((d, h), (1, h), (h, d), (1, d))]
    mlp = MemoryMLP(*ps)
    theta, eta, alpha = (Tensor(v, requires_grad=True) for v in (0.1, 0.6, 0.05))
    wk, wv = _leaf(rng, (d, d)), _leaf(rng, (d, d))
    x = _leaf(rng, (3, d))
    state = MemoryState(mlp, tuple(Tensor(rng.normal(0, 0.1, p.shape)) for p in ps), 0)

    def f():
        hyper = MemoryHyper(theta, eta, alpha, wk, wv, Tensor(np.eye(d)))
        new = memory_update(state, hyper, x, create_graph=True)
        return _proj(memory_retrieve(new, hyper, x))

    return f, ps + [theta, eta, alpha, wk, wv, x]


def _titans_block(rng):
    blk = TitansBlock(8, 2, 4, 2, rng, memory=True, second_order=True)
    blk.memory.w2.data = rng.normal(0, 0.3, blk.memory.w2.shape)
    x = _leaf(rng, (1, 8, 8))
    return (lambda: _proj(blk(x))), [x, blk.q.weight, blk.v.bias, blk.persistent, blk.memory.w1,
                                     blk.memory.theta_raw, blk.memory.eta_raw, blk.memory.w_k,
                                     blk.memory.w_q, blk.ffn.fc2.weight, blk.norm1.weight]


def _adapter_stage(rng):
    st = AdapterStage(8, 2, rng)
    st.gamma_in.data, st.gamma_ex.data = np.array(0.6), np.array(-0.5)
    st.cffn.fc2.weight.data = rng.normal(0, 0.3, st.cffn.fc2.weight.shape)
    shapes = [(2, 2), (1, 1)]
    f, c = _leaf(rng, (1, 4, 8)), _leaf(rng, (1, 5, 8))
    return (lambda: _proj(extract(c, inject(f, c, st), st, shapes))), \
        [f, c, st.gamma_in, st.gamma_ex, st.inject_attn.k.weight, st.extract_attn.q.weight,
         st.cffn.dw.weight, st.cffn.fc1.weight]


def _tscbam(rng, variant):
    p = CbamParams(4, rng, variant)
    f1, f2 = _leaf(rng, (1, 4, 3, 3)), _leaf(rng, (1, 4, 3, 3))
    extra = [p.mix.weight] if variant == "conv" else []
    return (lambda: _proj(fuse(f1, f2, p, variant))), [f1, f2, p.w1, p.w2, p.conv_w, p.conv_b] + extra


def _decoder(rng):
    shapes = [(4, 4), (2, 2), (1, 1), (1, 1)]
    dec = Decoder(8, 2, shapes, 2, rng, out_channels=4, n_persistent=2, chunk=8, memory_interval=3,
                  second_order=True)
    for stage in dec.stages:
        for b in stage.blocks:
            if b.memory is not None:
                b.memory.w2.data = rng.normal(0, 0.3, b.memory.w2.shape)
    pyr = [_leaf(rng, (1, 8, h, w)) for h, w in shapes]
    return (lambda: _proj(dec(pyr))), pyr + [dec.stages[0].merge.weight, dec.stages[1].blocks[2].memory.w1,
                                            dec.reduce.weight, dec.head.conv2.weight, dec.to_logit.bias]


def _convex(rng):
    lr, logits = _leaf(rng, (1, 2, 3, 3)), _leaf(rng, (1, 9, 6, 6))
    return (lambda: _proj(convex_upsample(lr, T.softmax(logits, axis=1)))), [lr, logits]


def _total_loss(rng):
    p = Tensor(rng.uniform(0.1, 0.9, (2, 5, 5)), requires_grad=True)
    t = (rng.random((2, 5, 5)) > 0.5).astype(float)
    return (lambda: total_loss(p, t, LossConfig(lam=0.8))), [p]


def _model_loss(rng):
    from .config import ModelConfig
    from .model import ChangeTitans

    cfg = ModelConfig.tiny(depth=4, dim=8, patch=4, chunk=4, heads=2, n_persistent=2, memory_interval=2,
                           second_order=True, image_size=8, decoder_channels=4, decoder_chunk=8)
    model = ChangeTitans(cfg)
    for _, mod in model.named_modules():
        if hasattr(mod, "gamma_in"):
            mod.gamma_in.data, mod.gamma_ex.data = np.array(0.5), np.array(0.5)
    x1, x2 = rng.uniform(0, 1, (2, 1, 3, 8, 8))
    target = (rng.random((1, 8, 8)) > 0.6).astype(float)
    params = model.parameters()
    picks = [params[i] for i in np.random.default_rng(1).choice(len(params), 12, replace=False)]

    def f():
        return total_loss(T.sigmoid(model(x1, x2)), target, cfg.loss)

    return f, picks


COMPOSITES = [
    ("memory_inner_step", _memory_step, OP_TOL),
    ("titans_block", _titans_block, OP_TOL),
    ("adapter_stage", _adapter_stage, OP_TOL),
    ("tscbam_sum", lambda r: _tscbam(r, "sum"), OP_TOL),
    ("tscbam_diff", lambda r: _tscbam(r, "diff"), OP_TOL),
    ("tscbam_conv", lambda r: _tscbam(r, "conv"), OP_TOL),
    ("convex_upsample", _convex, OP_TOL),
    ("decoder", _decoder, OP_TOL),
    ("total_loss", _total_loss, SCALAR_TOL),
    ("model_loss", _model_loss, SCALAR_TOL),
]


def run_suite(seed: int = 0, max_elements: int = 12, progress: Callable[[CheckResult], None] = None
              ) -> List[CheckResult]:
    """Central-difference checks (float64, eps 1e-5) of every op and composite."""
    rng = np.random.default_rng(seed)
    cases = [(f"op/{name}", (lambda fn=fn: _proj(fn())), xs, OP_TOL) for name, fn, xs in _op_cases(rng)]
    for name, build, tol in COMPOSITES:
        f, xs = build(rng)
        cases.append((f"composite/{name}", f, xs, tol))
    results = []
    for name, f, xs, tol in cases:
        t0 = time.perf_counter()
        err = grad_check(f, xs, max_elements=max_elements, seed=seed)
        res = CheckResult(name, err, tol, time.perf_counter() - t0)
        results.append(res)
        if progress is not None:
            progress(res)
    return results
