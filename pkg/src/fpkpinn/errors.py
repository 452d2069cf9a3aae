"""Exception types shared across the package."""


class FpkError(Exception):
    """Base class for all package errors."""


class ConfigError(FpkError, ValueError):
    """Invalid configuration or argument combination."""


class ShapeError(FpkError, ValueError):
    """Array or point dimensions do not match what the operation expects."""


class DomainError(FpkError, ValueError):
    """Argument outside the mathematical domain of a function."""


class NumericError(FpkError, ArithmeticError):
    """A computation produced a non-finite value.

    ``index`` is the offending point index when it is known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateSampleError(FpkError, ValueError):
    """Sample has too few points or zero spread for a bandwidth estimate."""


class DegeneratePriorError(FpkError, ValueError):
    """Resampling prior has too little positive mass to draw from."""
