"""Exception types raised across the toolkit."""

from __future__ import annotations

import numpy as np


class ToolkitError(Exception):
    """Base class for every error this package raises deliberately."""


class DimensionMismatchError(ToolkitError):
    """Operands have incompatible matrix or block dimensions."""


class DegenerateInputError(ToolkitError):
    """Input is too close to singular for the requested operation."""


class AmbiguousCutError(ToolkitError):
    """A spectral cut boundary lands on (or splits) an eigenvalue cluster."""


class InvalidAlgebraError(ToolkitError):
    """A purported algebra basis is not unital or not closed under * and products."""


class NotCompletelyPositiveError(ToolkitError):
    """An operation required a CP map and got something else.

    Carries the violating Choi eigenvector so callers can report it.
    """

    def __init__(self, message: str, witness: np.ndarray | None = None):
        super().__init__(message)
        self.witness = witness


class HypothesisFailureError(ToolkitError):
    """Measured input data violates a theorem hypothesis the routine needs."""


class NoCertificateError(ToolkitError):
    """No certified bound can be produced from the given data."""


class SolverError(ToolkitError):
    """The convex solver failed to converge to the requested accuracy."""


class MapFileError(ToolkitError):
    """A map or family file on disk is malformed; message names the field."""
