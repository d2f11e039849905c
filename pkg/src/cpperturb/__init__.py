"""Perturbation toolkit for almost-multiplicative CP maps on matrix algebras.

Turns near-complete-order-embeddings of M_n into exact ones with certified
distance bounds, and builds the projection-family maps showing the bounds'
dimension dependence is unavoidable.
"""

from .errors import (
    AmbiguousCutError,
    DegenerateInputError,
    DimensionMismatchError,
    HypothesisFailureError,
    InvalidAlgebraError,
    MapFileError,
    NoCertificateError,
    NotCompletelyPositiveError,
    SolverError,
    ToolkitError,
)

__all__ = [
    "AmbiguousCutError",
    "DegenerateInputError",
    "DimensionMismatchError",
    "HypothesisFailureError",
    "InvalidAlgebraError",
    "MapFileError",
    "NoCertificateError",
    "NotCompletelyPositiveError",
    "SolverError",
    "ToolkitError",
]

__version__ = "0.1.0"
