"""shadowalign: seeded training, permutation re-alignment and white-box
membership-inference auditing for small neural networks."""

from . import attack, metrics, nn, realign, symmetry
from .config import ExperimentConfig, load_config, parse_config
from .data import LabeledDataset, PartitionSpec, SyntheticSpec, gen_synthetic, make_splits
from .rng import SeedBundle
from .training import TrainConfig, init_weights, train

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "LabeledDataset",
    "PartitionSpec",
    "SeedBundle",
    "SyntheticSpec",
    "TrainConfig",
    "attack",
    "gen_synthetic",
    "init_weights",
    "load_config",
    "make_splits",
    "metrics",
    "nn",
    "parse_config",
    "realign",
    "symmetry",
    "train",
]
