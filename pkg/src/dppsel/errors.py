"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI lives in :mod:`dppsel.cli`; library code only
raises these types.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition (shape, range, symmetry...)."""


class ConfigError(ValidationError):
    """A run configuration file is malformed or contains unknown/invalid keys."""


class NumericError(RuntimeError):
    """A computation failed numerically (non-convergence, non-finite values)."""


class InsufficientRankError(NumericError):
    """A size-k sample was requested from a kernel of rank < k."""
