"""Neural long-term memory with surprise-driven online updates.

The memory is a two-layer MLP ``M`` whose parameters change while a sequence
is processed. For each chunk ``x`` the surprise is the gradient of the
associative loss ``mean_n ||M(x W_k) - x W_v||^2`` with respect to the MLP
parameters; it feeds a decaying momentum buffer and a forgetting update::

    S' = eta * S - theta * grad
    P' = (1 - alpha) * P + S'

Parameters may carry leading batch axes: the initial parameters are shared,
and each sample's memory diverges after its first update. Weights are stored
``[..., d_in, d_hidden]`` and biases as row vectors ``[..., 1, d_hidden]`` so
batched and unbatched states broadcast the same way.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from . import tensor as T
from .nn import Module, Parameter, uniform_init
from .tensor import Tensor, no_grad

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class MemoryMLP:
    """``M(x) = [x +] silu(x w1 + b1) w2 + b2``; ``residual`` adds the skip term."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    residual: bool = False

    @property
    def params(self) -> Tuple[Tensor, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    @property
    def d_in(self) -> int:
        return self.w1.shape[-2]

    def with_params(self, params) -> "MemoryMLP":
        return replace(self, **dict(zip(PARAM_NAMES, params)))

    def __call__(self, x) -> Tensor:
        y = T.matmul(T.silu(T.matmul(x, self.w1) + self.b1), self.w2) + self.b2
        return y + x if self.residual else y


@dataclass(frozen=True)
class MemoryState:
    mlp: MemoryMLP
    momentum: Tuple[Tensor, ...]
    step: int = 0

    @classmethod
    def fresh(cls, mlp: MemoryMLP) -> "MemoryState":
        return cls(mlp, tuple(Tensor(np.zeros(p.shape)) for p in mlp.params), 0)


@dataclass(frozen=True)
class MemoryHyper:
    """Effective update rates and the key/value/query projections.

    ``eta`` and ``alpha`` are clamped to [0, 1] on construction.
    """

    theta: Tensor
    eta: Tensor
    alpha: Tensor
    w_k: Tensor
    w_v: Tensor
    w_q: Tensor = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "theta", T.as_tensor(self.theta))
        object.__setattr__(self, "eta", T.clamp(T.as_tensor(self.eta), 0.0, 1.0))
        object.__setattr__(self, "alpha", T.clamp(T.as_tensor(self.alpha), 0.0, 1.0))
        if self.w_q is None:
            object.__setattr__(self, "w_q", Tensor(np.eye(self.w_k.shape[0])))


def _check_dim(state: MemoryState, x) -> None:
    if x.shape[-1] != state.mlp.d_in:
        raise ValueError(f"memory input dim {x.shape[-1]} != d_in {state.mlp.d_in}")


def assoc_loss(state: MemoryState, hyper: MemoryHyper, x) -> Tensor:
    """Mean over tokens of ``||M(x W_k) - x W_v||^2``; one value per leading batch index."""
    x = T.as_tensor(x)
    _check_dim(state, x)
    r = state.mlp(T.matmul(x, hyper.w_k)) - T.matmul(x, hyper.w_v)
    return T.mean(T.sum(r * r, axis=-1), axis=-1)


def _analytic_grad(mlp: MemoryMLP, k: Tensor, v: Tensor) -> Tuple[Tensor, ...]:
    # hand-derived backprop of assoc_loss, written in tape ops so it can itself be differentiated
    n = k.shape[-2]
    pre = T.matmul(k, mlp.w1) + mlp.b1
    s = T.sigmoid(pre)
    h = pre * s
    y = T.matmul(h, mlp.w2) + mlp.b2
    if mlp.residual:
        y = y + k
    dy = (y - v) * (2.0 / n)
    g_w2 = T.matmul(T.swapaxes(h, -1, -2), dy)
    g_b2 = T.sum(dy, axis=-2, keepdims=True)
    dh = T.matmul(dy, T.swapaxes(mlp.w2, -1, -2))
    dpre = dh * (s * (1.0 + pre * (1.0 - s)))
    g_w1 = T.matmul(T.swapaxes(k, -1, -2), dpre)
    g_b1 = T.sum(dpre, axis=-2, keepdims=True)
    return g_w1, g_b1, g_w2, g_b2


def memory_grad(state: MemoryState, hyper: MemoryHyper, x, create_graph: bool = False):
    """Surprise: gradient of :func:`assoc_loss` w.r.t. the MLP parameters.

    With ``create_graph=False`` the result is a constant (first-order inner
    loop); otherwise it stays on the tape as a function of ``x``, the
    projections and the current parameters.
    """
    x = T.as_tensor(x)
    _check_dim(state, x)
    if create_graph:
        return _analytic_grad(state.mlp, T.matmul(x, hyper.w_k), T.matmul(x, hyper.w_v))
    with no_grad():
        mlp = state.mlp.with_params(tuple(p.detach() for p in state.mlp.params))
        k = T.matmul(x.detach(), hyper.w_k.detach())
        v = T.matmul(x.detach(), hyper.w_v.detach())
        return tuple(g.detach() for g in _analytic_grad(mlp, k, v))


def memory_update(state: MemoryState, hyper: MemoryHyper, x, create_graph: bool = False) -> MemoryState:
    """One momentum-and-forgetting step; returns a new state and leaves ``state`` untouched."""
    grads = memory_grad(state, hyper, x, create_graph)
    momentum = tuple(hyper.eta * s - hyper.theta * g for s, g in zip(state.momentum, grads))
    keep = 1.0 - hyper.alpha
    params = tuple(keep * p + s for p, s in zip(state.mlp.params, momentum))
    return MemoryState(state.mlp.with_params(params), momentum, state.step + 1)


def memory_retrieve(state: MemoryState, hyper: MemoryHyper, x) -> Tensor:
    """Read the memory with queries ``x W_q``; pure."""
    x = T.as_tensor(x)
    _check_dim(state, x)
    return state.mlp(T.matmul(x, hyper.w_q))


def _inv_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


class NeuralMemory(Module):
    """Learnable initial memory, projections and update rates for one Titans block.

    ``theta = softplus(theta_raw)``; ``eta`` and ``alpha`` are sigmoids of
    their raw scalars. The initial MLP has a zero final weight and unit final
    bias, so before any learning ``M(.)`` returns ones and the gated block
    output equals the attention output.
    """

    def __init__(self, dim: int, rng: np.random.Generator, hidden: int = None,
                 theta: float = 0.05, eta: float = 0.5, alpha: float = 0.05,
                 second_order: bool = False):
        hidden = hidden or dim
        self.w1 = Parameter(uniform_init(rng, (dim, hidden), dim))
        self.b1 = Parameter(np.zeros((1, hidden)))
        self.w2 = Parameter(np.zeros((hidden, dim)))
        self.b2 = Parameter(np.ones((1, dim)))
        self.w_k = Parameter(uniform_init(rng, (dim, dim), dim))
        self.w_v = Parameter(uniform_init(rng, (dim, dim), dim))
        self.w_q = Parameter(uniform_init(rng, (dim, dim), dim))
        self.theta_raw = Parameter(_inv_softplus(theta))
        self.eta_raw = Parameter(_logit(eta))
        self.alpha_raw = Parameter(_logit(alpha))
        self.second_order = second_order

    def hyper(self) -> MemoryHyper:
        return MemoryHyper(T.softplus(self.theta_raw), T.sigmoid(self.eta_raw),
                           T.sigmoid(self.alpha_raw), self.w_k, self.w_v, self.w_q)

    def initial_state(self) -> MemoryState:
        return MemoryState.fresh(MemoryMLP(self.w1, self.b1, self.w2, self.b2))

    def retrieve(self, state, hyper, x):
        return memory_retrieve(state, hyper, x)

    def update(self, state, hyper, x):
        return memory_update(state, hyper, x, create_graph=self.second_order)
