"""Curiosity-driven exploration from Bayesian linear regression over a learned embedding."""

from .errors import ContractViolation, InvalidArgument, NumericalFailure, UnsupportedOperation

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "InvalidArgument",
    "NumericalFailure",
    "UnsupportedOperation",
    "__version__",
]
