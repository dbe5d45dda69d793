"""Model/training configuration and the ``key = value`` config-file format."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from ..objectives import LossConfig
from ..vtitans import EncoderConfig

FUSIONS = ("sum", "diff", "conv", "siam_diff", "siam_conc", "early")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    image_size: int = 256
    adapter: bool = True
    memory: bool = True
    fusion: str = "sum"
    decoder_channels: int = 64
    decoder_chunk: int = 64
    upsample: str = "convex"
    cffn_ratio: float = 0.25
    loss: LossConfig = field(default_factory=LossConfig)
    bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.upsample not in ("convex", "bilinear"):
            raise ConfigError(f"upsampling must be convex or bilinear, got {self.upsample!r}")
        p = self.encoder.patch
        if self.image_size % (2 * p):
            raise ConfigError(f"input resolution {self.image_size} must be divisible by 2 * patch = {2 * p}")

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Desk-scale configuration: L=4, C=32, p=8, chunk 16 on 32x32 inputs."""
        enc = EncoderConfig(depth=4, dim=32, patch=8, chunk=16, n_persistent=4, heads=2, memory_interval=3)
        base = cls(encoder=enc, image_size=32, decoder_channels=16)
        return base.with_overrides(**overrides)

    def with_overrides(self, **kw) -> "ModelConfig":
        enc_names = {f.name for f in fields(EncoderConfig)}
        enc_kw = {k: kw.pop(k) for k in list(kw) if k in enc_names}
        cfg = replace(self, encoder=replace(self.encoder, **enc_kw)) if enc_kw else self
        return replace(cfg, **kw) if kw else cfg


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    learning_rate: float = 0.05
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 8
    gradient_clipping: Optional[float] = 0.5
    augment: bool = False
    log_every: int = 50

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")


# config-file key -> (section, attribute, parser)
def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _opt_int(s: str) -> Optional[int]:
    v = s.strip().lower()
    if v in ("none", "never", "off", "0", ""):
        return None
    if v.startswith("every"):
        v = v.split()[1]
    return int(v)


def _opt_float(s: str) -> Optional[float]:
    return None if s.strip().lower() in ("none", "off") else float(s)


def _resolution(s: str) -> int:
    parts = s.lower().replace("×", "x").split("x")
    if len(parts) == 2 and parts[0].strip() != parts[1].strip():
        raise ConfigError(f"only square inputs are supported, got {s!r}")
    return int(parts[0])


def _patch(s: str) -> int:
    return _resolution(s)


KEYS = {
    "number_of_titans_blocks": ("encoder", "depth", int),
    "embedding_dimension": ("encoder", "dim", int),
    "patch_size": ("encoder", "patch", _patch),
    "chunk_size": ("encoder", "chunk", int),
    "memory_block_interval": ("encoder", "memory_interval", _opt_int),
    "persistent_tokens": ("encoder", "n_persistent", int),
    "attention_heads": ("encoder", "heads", int),
    "input_channels": ("encoder", "in_channels", int),
    "second_order_memory": ("encoder", "second_order", _bool),
    "input_resolution": ("model", "image_size", _resolution),
    "adapter": ("model", "adapter", _bool),
    "neural_memory": ("model", "memory", _bool),
    "fusion_module": ("model", "fusion", str),
    "decoder_channels": ("model", "decoder_channels", int),
    "decoder_chunk_size": ("model", "decoder_chunk", int),
    "upsampling_strategy": ("model", "upsample", str),
    "cffn_ratio": ("model", "cffn_ratio", float),
    "seed": ("model", "seed", int),
    "balance_factor": ("loss", "lam", float),
    "dice_epsilon": ("loss", "eps", float),
    "optimizer": ("train", "optimizer", str),
    "learning_rate": ("train", "learning_rate", float),
    "momentum": ("train", "momentum", float),
    "weight_decay": ("train", "weight_decay", float),
    "batch_size": ("train", "batch_size", int),
    "steps": ("train", "steps", int),
    "gradient_clipping": ("train", "gradient_clipping", _opt_float),
    "augmentation": ("train", "augment", _bool),
    "log_every": ("train", "log_every", int),
}


def parse_config(text: str, base: Optional[ModelConfig] = None) -> Tuple[ModelConfig, TrainConfig]:
    """Parse ``key = value`` lines (``#`` comments allowed) on top of ``base`` (default: tiny)."""
    sections = {"encoder": {}, "model": {}, "loss": {}, "train": {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower().replace(" ", "_").replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, attr, parse = KEYS[key]
        try:
            sections[section][attr] = parse(value)
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    base = base or ModelConfig.tiny()
    try:
        enc = replace(base.encoder, **sections["encoder"])
        loss = replace(base.loss, **sections["loss"])
        model = replace(base, encoder=enc, loss=loss, **sections["model"])
        train = TrainConfig(**sections["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return model, train


def load_config(path) -> Tuple[ModelConfig, TrainConfig]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_config(model: ModelConfig, train: Optional[TrainConfig] = None) -> str:
    """Inverse of :func:`parse_config`: one ``key = value`` line per known key."""
    lines = []
    for key, (section, attr, _) in KEYS.items():
        if section == "train":
            if train is None:
                continue
            value = getattr(train, attr)
        elif section == "encoder":
            value = getattr(model.encoder, attr)
        elif section == "loss":
            value = getattr(model.loss, attr)
        else:
            value = getattr(model, attr)
        lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"


def config_hash(model: ModelConfig) -> str:
    return hashlib.sha256(format_config(model).encode()).hexdigest()[:16]
