"""Central finite-difference checking of tape gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import Tensor, no_grad


def grad_check(
    f: Callable[[], Tensor],
    x: Union[Tensor, Sequence[Tensor]],
    eps: float = 1e-5,
    max_elements: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Compare the tape gradient of scalar ``f()`` against central differences.

    ``f`` takes no arguments and must read the current ``.data`` of every
    tensor in ``x``. Returns the max over checked elements of
    ``|a - n| / max(1, |a|, |n|)``. With ``max_elements`` only a random subset
    of each input's entries is perturbed.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.grad = None
        t.requires_grad = True
    out = f()
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, a in zip(xs, analytic):
            flat_idx = np.arange(t.size)
            if max_elements is not None and t.size > max_elements:
                flat_idx = rng.choice(t.size, size=max_elements, replace=False)
            base = t.data
            for i in flat_idx:
                plus = base.copy()
                plus.flat[i] += eps
                t.data = plus
                fp = float(f().data)
                minus = base.copy()
                minus.flat[i] -= eps
                t.data = minus
                fm = float(f().data)
                t.data = base
                num = (fp - fm) / (2.0 * eps)
                ana = float(a.flat[i])
                err = abs(ana - num) / max(1.0, abs(ana), abs(num))
                worst = max(worst, err)
    return worst
