"""Modeling, identification, trajectory planning and robust control of a
motorized boom barrier."""

__version__ = "0.1.0"

from .drive import DriveParams, average_voltage, invert, verify_psi_bound
from .errors import (BoomError, ConfigError, ConvergenceError, DomainError, InfeasibleError,
                     IntegrationError, VerificationError)
from .plant import PlantParams, default_params, dynamics

__all__ = [
    "BoomError", "ConfigError", "ConvergenceError", "DomainError", "InfeasibleError",
    "IntegrationError", "VerificationError", "DriveParams", "PlantParams",
    "average_voltage", "default_params", "dynamics", "invert", "verify_psi_bound",
]
