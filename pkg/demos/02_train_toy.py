"""Overfit eight synthetic pairs with the tiny configuration, then save and reload a checkpoint.

Takes a few minutes on one core.
"""

import sys
import tempfile
import time

from changetitans.pipeline import (
    ChangeTitans,
    ModelConfig,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    synth_dataset,
    train,
    training_f1,
)

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
pairs = synth_dataset(8, seed=0)
model = ChangeTitans(ModelConfig.tiny())
t0 = time.perf_counter()


def log(step, loss):
    if step % 50 == 0:
        print(f"step {step:4d}  loss {loss:.4f}  {time.perf_counter() - t0:5.0f}s", flush=True)


res = train(model, pairs, TrainConfig(steps=steps), callback=log, eval_every=50, stop_f1=0.95)
for step, f1 in res.f1:
    print(f"step {step:4d}  training F1 {f1:.4f}")

with tempfile.TemporaryDirectory() as tmp:
    save_checkpoint(tmp, model, res.steps)
    restored, manifest = load_checkpoint(tmp)
    print(f"reloaded step {manifest['step']}, training F1 {training_f1(restored, pairs):.4f}")
