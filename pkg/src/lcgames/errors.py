"""Exception hierarchy shared across the package.

Two broad families matter for the CLI exit codes: DataError (malformed or
missing inputs, exit 2) and NumericError (estimation or simulation failure,
exit 3).
"""

from __future__ import annotations


class LcgamesError(Exception):
    """Base class for all package errors."""


class DataError(LcgamesError):
    """Malformed input data, missing artifacts, or schema violations."""


class MapFormatError(DataError):
    """Lane map violates its format contract (e.g. degenerate polyline)."""


class SchemaVersionError(DataError):
    """Persisted artifact was written by an incompatible schema version."""


class NumericError(LcgamesError):
    """A numeric procedure failed (non-convergence, degenerate inputs)."""


class FixedPointError(NumericError):
    """Choice-probability fixed point did not converge.

    Carries the last residual so the caller can decide whether to retry
    with tighter damping.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class FitError(NumericError):
    """Optimizer failed; carries the best parameters seen so far."""

    def __init__(self, message: str, best_theta=None, grad_norm: float | None = None):
        super().__init__(message)
        self.best_theta = best_theta
        self.grad_norm = grad_norm


class DegenerateClusterError(NumericError):
    """Clustering could not produce two non-empty clusters."""
