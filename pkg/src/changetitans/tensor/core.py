"""Dense tensors and the dynamic reverse-mode tape."""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64

_seq = itertools.count()
_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = is_grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Node:
    """One executed differentiable op: its inputs and how to push a gradient back to them."""

    __slots__ = ("parents", "backward", "seq", "op")

    def __init__(self, parents, backward, op):
        self.parents = parents
        self.backward = backward
        self.seq = next(_seq)
        self.op = op

    def __repr__(self):
        return f"Node({self.op}, seq={self.seq})"


class Tensor:
    """Row-major float array with optional gradient recording.

    ``data`` is never modified by any op once the tensor exists; only ``grad``
    accumulates.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self, grad=None) -> "Tape":
        tape = Tape(self)
        tape.backward(grad)
        return tape

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return ops.add(self, other)

    def __radd__(self, other):
        return ops.add(other, self)

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    def __rmul__(self, other):
        return ops.mul(other, self)

    def __truediv__(self, other):
        return ops.div(self, other)

    def __rtruediv__(self, other):
        return ops.div(other, self)

    def __neg__(self):
        return ops.neg(self)

    def __pow__(self, exponent):
        return ops.power(self, exponent)

    def __matmul__(self, other):
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        return ops.matmul(other, self)

    def __getitem__(self, idx):
        return ops.getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return ops.mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return ops.max(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def swapaxes(self, a, b):
        return ops.swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap an op result, recording a tape node when any parent needs a gradient."""
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(tuple(parents), backward, op)
    return out


class Tape:
    """The ordered record of differentiable ops that produced ``root``.

    ``entries`` lists the recorded outputs in execution order; ``backward``
    walks them in exactly the reverse order and appends each visited node's
    sequence number to ``visited``.
    """

    def __init__(self, root: Tensor):
        self.root = root
        seen = set()
        entries = []
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen or t.node is None:
                continue
            seen.add(id(t))
            entries.append(t)
            stack.extend(p for p in t.node.parents if p.requires_grad)
        entries.sort(key=lambda t: t.node.seq)
        self.entries = entries
        self.visited: list = []

    @property
    def ops(self) -> list:
        return [t.node.op for t in self.entries]

    def backward(self, grad=None) -> None:
        root = self.root
        if not root.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if root.size != 1:
                raise ValueError(f"grad must be given for non-scalar output of shape {root.shape}")
            grad = np.ones_like(root.data)
        grad = np.asarray(grad, dtype=DTYPE)
        if root.node is None:
            _accumulate_leaf(root, grad)
            return
        pending = {id(root): grad}
        for t in reversed(self.entries):
            g = pending.pop(id(t), None)
            if g is None:
                continue
            node = t.node
            self.visited.append(node.seq)
            for p, pg in zip(node.parents, node.backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise RuntimeError(f"{node.op}: gradient shape {pg.shape} != input shape {p.shape}")
                if p.node is None:
                    _accumulate_leaf(p, pg)
                else:
                    prev = pending.get(id(p))
                    pending[id(p)] = pg if prev is None else prev + pg


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    t.grad = np.array(g, dtype=DTYPE) if t.grad is None else t.grad + g


from . import ops  # noqa: E402  (operators above dispatch into ops)
