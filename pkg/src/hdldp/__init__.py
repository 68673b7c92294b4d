"""High-dimensional LDP mean and frequency estimation.

Perturbation mechanisms, dimension-sampled collection, a per-dimension
Gaussian deviation model and L1/L2 re-calibration of aggregated means.
"""

from .errors import ConfigError, DomainError, HDLDPError, ParseError, TrialError
from .mechanisms import KINDS, MechanismSpec

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DomainError",
    "HDLDPError",
    "KINDS",
    "MechanismSpec",
    "ParseError",
    "TrialError",
    "__version__",
]
