"""The neural memory as an online learner: it memorises a key/value association chunk by chunk.

Each update takes a momentum step against the surprise (gradient of the
associative loss) and decays the old weights by ``1 - alpha``.
"""

import numpy as np

from changetitans.memory import MemoryHyper, MemoryMLP, MemoryState, assoc_loss, memory_update
from changetitans.tensor import Tensor

rng = np.random.default_rng(0)
d = 8
mlp = MemoryMLP(*(Tensor(rng.normal(0, 0.2, s)) for s in ((d, 16), (1, 16), (16, d), (1, d))))
hyper = MemoryHyper(theta=Tensor(0.02), eta=Tensor(0.6), alpha=Tensor(0.001),
                    w_k=Tensor(rng.normal(0, 0.4, (d, d))), w_v=Tensor(rng.normal(0, 0.4, (d, d))))
state = MemoryState.fresh(mlp)
stream = rng.normal(size=(4, 6, d))  # four distinct chunks, replayed

for epoch in range(40):
    for chunk in stream:
        state = memory_update(state, hyper, chunk)
    if epoch % 10 == 0 or epoch == 39:
        loss = np.mean([float(assoc_loss(state, hyper, c).data) for c in stream])
        print(f"after {state.step:3d} updates: associative loss {loss:.4f}")

# with forgetting pinned to 1 the memory keeps only the latest momentum
reset = MemoryHyper(Tensor(0.02), Tensor(0.6), Tensor(1.0), hyper.w_k, hyper.w_v)
s = memory_update(state, reset, stream[0])
print("alpha=1 leaves params == momentum:",
      all(np.array_equal(p.data, m.data) for p, m in zip(s.mlp.params, s.momentum)))
