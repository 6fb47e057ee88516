"""Constrained maximum-entropy inverse RL with a parity-hashing sampler."""

__version__ = "0.1.0"

from .constraints import ConstraintSet, indicator
from .errors import XorIrlError
from .learner import TrainConfig, exact_gradient, nll_exact, train
from .mdp import Trajectory
from .sampler import SamplerConfig, batch_sample, sample

__all__ = [
    "ConstraintSet", "SamplerConfig", "TrainConfig", "Trajectory", "XorIrlError",
    "__version__", "batch_sample", "exact_gradient", "indicator", "nll_exact", "sample", "train",
]
