"""Exception types raised across the package."""


class PPTrendError(Exception):
    """Base class for package errors."""


class InvalidDomainError(PPTrendError, ValueError):
    pass


class OutOfDomainError(PPTrendError, ValueError):
    pass


class ConfigurationError(PPTrendError, ValueError):
    pass


class DimensionError(PPTrendError, ValueError):
    pass


class NotConvergedError(PPTrendError, RuntimeError):
    """Raised when an operation requires a converged fit."""


class SingularInformationError(PPTrendError, ArithmeticError):
    """The information matrix W cannot be inverted reliably."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class DataFormatError(PPTrendError, ValueError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
