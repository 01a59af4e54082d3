"""Simulation and verification toolkit for a mean-reverting stochastic
volatility equation with Markovian regime switching::

    dX_t = [a(r_t) - b(r_t) X_t] dt + sigma(r_t) X_t^theta(r_t) dB_t
"""

from .model import ModelSpec, ValidationReport, load_model, paper_example, validate

__version__ = "0.1.0"

__all__ = [
    "ModelSpec",
    "ValidationReport",
    "load_model",
    "paper_example",
    "validate",
    "__version__",
]
