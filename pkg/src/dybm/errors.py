"""Exception hierarchy and process exit codes."""

EXIT_OK = 0
EXIT_MALFORMED = 2
EXIT_NUMERICAL = 3


class DybmError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = EXIT_MALFORMED


class MalformedInputError(DybmError, ValueError):
    """Input file or payload could not be parsed."""


class DomainError(DybmError, ValueError):
    """A value is outside the domain an operation accepts."""


class ConfigError(DomainError):
    """Invalid run configuration (decay rates, delay, learning rate, ...)."""


class NumericalError(DybmError, ArithmeticError):
    """A computation produced NaN/Inf or a non positive-definite matrix."""

    exit_code = EXIT_NUMERICAL
