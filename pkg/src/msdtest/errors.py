"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MSDError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(MSDError, ValueError):
    """An argument is outside its admissible range."""


class DimensionError(ParameterError):
    """Arrays have incompatible shapes or dimensions."""


class OracleCapError(MSDError):
    """An exact solve was requested on a problem above the oracle size cap."""


class ConvergenceError(MSDError, RuntimeError):
    """Sinkhorn did not reach the requested tolerance.

    The solver report is kept on ``self.report`` so callers can inspect the
    iteration count and final marginal error.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class EmptyCurveError(MSDError):
    """Every requested level produced an empty radial band."""


class InfeasibleTestError(MSDError):
    """The estimated contact set is empty for the sup statistic."""


class DataFormatError(MSDError, ValueError):
    """Input data could not be parsed."""
