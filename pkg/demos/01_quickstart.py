"""Build the tiny network, run one synthetic pair through it and score the (untrained) prediction."""

from changetitans import metrics
from changetitans.pipeline import ChangeTitans, ModelConfig, forward, synth_pair

pair = synth_pair(seed=1, size=32, n_objects=3)
print(f"frames {pair.x1.shape}, {int(pair.mask.sum())} changed pixels")

model = ChangeTitans(ModelConfig.tiny())
print(f"{model.num_parameters()} parameters")

cm = forward((pair.x1, pair.x2), model)
print(f"probabilities in [{cm.prob.min():.3f}, {cm.prob.max():.3f}]")
# an untrained model predicts almost nothing; see 02_train_toy.py
print(metrics.evaluate(cm.mask, pair.mask).to_text())
