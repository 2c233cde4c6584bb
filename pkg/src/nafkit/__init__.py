"""Autoregressive normalizing flows with monotone neural transformers."""

from .errors import (
    DataError,
    DomainError,
    InconsistencyError,
    NumericError,
    RangeError,
    SaturationError,
)
from .flow import FlowLayer, FlowStack, StandardNormal, UniformBase
from .targets import TargetSpec, count_modes, get_target, registry_names
from .training import Adam, TrainConfig, energy_loss, fit, mle_loss

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "DataError",
    "DomainError",
    "FlowLayer",
    "FlowStack",
    "InconsistencyError",
    "NumericError",
    "RangeError",
    "SaturationError",
    "StandardNormal",
    "TargetSpec",
    "TrainConfig",
    "UniformBase",
    "count_modes",
    "energy_loss",
    "fit",
    "get_target",
    "mle_loss",
    "registry_names",
    "__version__",
]
