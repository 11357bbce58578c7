"""Numerical laboratory for a stochastic Hopf slow-fast system and its reductions."""
from .errors import (ConfigurationError, DegenerateMeasureError, DomainError,
                     IntegrationBlowupError, UnreliableWeightsError)
from .model import (ModelParams, SystemSpec, c_tau, diffusion, drift, q_const, r_det,
                    r_star, to_cartesian, to_polar)

__version__ = "0.1.0"

__all__ = ["ConfigurationError", "DegenerateMeasureError", "DomainError", "IntegrationBlowupError",
           "UnreliableWeightsError", "ModelParams", "SystemSpec", "c_tau", "diffusion", "drift", "q_const",
           "r_det", "r_star", "to_cartesian", "to_polar", "__version__"]
