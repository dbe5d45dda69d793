"""End-to-end pipeline: configuration, model assembly, data, training and checkpoints."""

from .config import ConfigError, ModelConfig, TrainConfig, config_hash, format_config, load_config, parse_config
from .data import SamplePair, augment, read_dataset, read_pair, stack, synth_dataset, synth_pair, write_dataset
from .model import ChangeTitans, SiamConc, SiamDiff, baseline_fuse, forward
from .train import (
    SGD,
    Adam,
    TrainResult,
    clip_grad_norm,
    load_checkpoint,
    loss_on,
    make_optimizer,
    save_checkpoint,
    train,
    training_f1,
)
