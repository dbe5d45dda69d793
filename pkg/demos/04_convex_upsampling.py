"""Convex upsampling never overshoots: every output is a convex mix of nearby low-res values."""

import numpy as np

from changetitans import tensor as T
from changetitans.decoder import convex_upsample

rng = np.random.default_rng(0)
lr = np.zeros((1, 4, 4))
lr[0, :, 2:] = 1.0  # a hard vertical edge

sharp = T.softmax(rng.normal(0, 6, (1, 9, 8, 8)), axis=1)
up = convex_upsample(lr, sharp).data[0]
smooth = T.bilinear_resize(lr[None], 8, 8).data[0, 0]

np.set_printoptions(precision=2, suppress=True)
print("convex (random sharp weights):\n", up)
print("bilinear:\n", smooth)
print(f"range {up.min():.3f}..{up.max():.3f} stays inside [0, 1]")
