"""ChangeTitans: remote-sensing change detection with Titans-style neural memory, in numpy."""

from . import adapter, decoder, memory, metrics, nn, objectives, tensor, tscbam, vtitans
from .decoder import ChangeMap
from .pipeline import ChangeTitans, ModelConfig, TrainConfig, forward, synth_pair, train

__version__ = "0.1.0"
