"""
Hidden-term discovery for differential equations

A surrogate network U and a hidden-term network F are trained jointly under a
physics-informed loss, then F is distilled into a sparse symbolic formula.
A UDE baseline trains F through an unrolled RK4 solve for comparison.
"""

from .dynamics import DifferentialSystem, build_system, cell_apoptosis, lotka_volterra, viscous_burgers
from .errors import (
    CheckpointError,
    ConditioningError,
    ConfigurationError,
    HiddenPhysicsError,
    IntegrationError,
    NonFiniteError,
    UnsupportedOrderError,
)
from .trainer import TrainConfig, TrainReport, train
from .ude_baseline import UdeConfig, ude_train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConditioningError",
    "ConfigurationError",
    "DifferentialSystem",
    "HiddenPhysicsError",
    "IntegrationError",
    "NonFiniteError",
    "TrainConfig",
    "TrainReport",
    "UdeConfig",
    "UnsupportedOrderError",
    "build_system",
    "cell_apoptosis",
    "lotka_volterra",
    "train",
    "ude_train",
    "viscous_burgers",
]
