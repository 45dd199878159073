from .optim import Adam, cosine_lr
from ..synth import SynthDataset, SynthSpec, mass_circular_mean, synth_generate
from .tinynet import TinyNet
from .train import TrainConfig, TrainReport, compare, stratified_folds, train

__all__ = [
    "Adam",
    "SynthDataset",
    "SynthSpec",
    "TinyNet",
    "TrainConfig",
    "TrainReport",
    "compare",
    "cosine_lr",
    "mass_circular_mean",
    "stratified_folds",
    "synth_generate",
    "train",
]
