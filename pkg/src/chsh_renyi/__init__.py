"""Analytic Renyi-entropy rate functions for CHSH-based device-independent QKD."""

from .numerics import DomainError
from .rate_functions import Family, rate

__all__ = ["DomainError", "Family", "rate"]
__version__ = "0.1.0"
