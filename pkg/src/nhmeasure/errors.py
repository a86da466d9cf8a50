"""Exception and warning types raised across the package."""

from __future__ import annotations


class NHMeasureError(Exception):
    """Base class for library errors."""


class NumericalError(NHMeasureError):
    """A computation could not be carried out on the given numbers."""


class DegenerateSpectrum(NumericalError):
    pass


class NonFinite(NumericalError, ValueError):
    pass


class OrthogonalStates(NumericalError):
    """Weak value requested on a (numerically) orthogonal bra/ket pair."""


class AllWeightsZero(NumericalError):
    pass


class SectorMismatch(NumericalError):
    pass


class DimensionMismatch(NHMeasureError, ValueError):
    pass


class IndexOutOfRange(NHMeasureError, IndexError):
    pass


class NonHermitianObservable(NHMeasureError, ValueError):
    pass


class GridTooLarge(NHMeasureError, ValueError):
    pass


class InvalidSpin(NHMeasureError, ValueError):
    pass


class ParseError(NHMeasureError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(NHMeasureError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class AdiabaticityViolated(UserWarning):
    """Final branch fidelity of an adiabatic run fell below threshold."""


class RegimeWarning(UserWarning):
    """Parameters lie outside the regime where the model is meant to apply."""


class PrecisionWarning(UserWarning):
    """A double-precision result is expected to have lost most of its digits."""
