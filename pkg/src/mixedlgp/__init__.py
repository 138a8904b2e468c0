"""Bayesian multilevel latent Gaussian process model for mixed ordinal and
continuous spatial responses."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    MetricSpec,
    ModelConfig,
    ObservationSet,
    PriorConfig,
    Constraints,
    SamplerSettings,
    ValidationError,
    validate_dataset,
)
from .sampler import ChainSettings, Problem, run_chain  # noqa: E402
from .posterior import Draws  # noqa: E402
from .simulation import SimConfig, simulate_dataset  # noqa: E402

__all__ = [
    "ChainSettings", "Constraints", "Draws", "MetricSpec", "ModelConfig", "ObservationSet",
    "PriorConfig", "Problem", "SamplerSettings", "SimConfig", "ValidationError", "run_chain",
    "simulate_dataset", "validate_dataset",
]
