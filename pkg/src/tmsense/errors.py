"""Exception types raised by tmsense."""


class TmsenseError(Exception):
    """Base class for all package errors."""


class InvalidParameter(TmsenseError, ValueError):
    """An argument is outside the domain of the operation."""


class DimensionMismatch(InvalidParameter):
    pass


class NumericalError(TmsenseError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


class WeightOutsideSupport(NumericalError):
    """The weight vector has a component in the null space of the information matrix."""


class SingularCovariance(NumericalError):
    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class NonPositiveCovariance(NumericalError):
    """Raised when a covariance matrix has no real square root."""


class TruncationError(NumericalError):
    """Fock-space truncation leaks more population than allowed."""


class UninformativeMeasurement(NumericalError):
    """The chosen measurement carries no Fisher information at the operating point."""
