"""Numerical pluripotential theory on flat complex tori.

Envelopes of quasi-plurisubharmonic functions, their Monge-Ampère measures,
convolution regularization, weak geodesics and supercanonical envelopes, all
on periodic grids over ``C^n / (Z^n + i Z^n)`` with ``n`` in {1, 2}.
"""

__version__ = "0.1.0"

from .errors import (ConvergenceError, KltViolationError, NotPseudoEffectiveError, PluripotError,
                     PreconditionError, ValidationError)
from .geometry import AlphaForm, HermitianField, ScalarField, TorusGrid, alpha_from_spec, integrate

__all__ = [
    "AlphaForm", "ConvergenceError", "HermitianField", "KltViolationError", "NotPseudoEffectiveError",
    "PluripotError", "PreconditionError", "ScalarField", "TorusGrid", "ValidationError", "alpha_from_spec",
    "integrate", "__version__",
]
