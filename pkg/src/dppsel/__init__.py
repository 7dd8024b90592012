"""Determinantal selection of ensemble critics.

Builds a CKA similarity kernel over the Q-values of an ensemble, repairs it
to positive semi-definite, and draws fixed-size determinantal samples to
decide which members receive gradients — with exact FLOP accounting and a
Monte-Carlo lab for the variance effects of coupled member updates.
"""

from . import dpp, kernel, linalg, nn, rl, variance_lab
from .errors import (
    ConfigError,
    InsufficientRankError,
    NumericError,
    ValidationError,
)
from .rng import make_rng

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "InsufficientRankError",
    "NumericError",
    "ValidationError",
    "dpp",
    "kernel",
    "linalg",
    "make_rng",
    "nn",
    "rl",
    "variance_lab",
]
