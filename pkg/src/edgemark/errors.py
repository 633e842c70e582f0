"""Exception types shared across the package."""


class EdgemarkError(Exception):
    """Base class for all package errors."""


class DimensionError(EdgemarkError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(EdgemarkError, ValueError):
    """Invalid configuration value."""


class NumericError(EdgemarkError, ArithmeticError):
    """A computation produced a value outside its valid domain."""


class CapacityError(EdgemarkError, RuntimeError):
    """Not enough candidate edges to carry the requested payload."""


class ParseError(EdgemarkError, ValueError):
    """A file could not be parsed; the message names the offending field."""


class UsageError(EdgemarkError, ValueError):
    """An operation was called in a way its contract forbids."""


class TransportError(EdgemarkError, RuntimeError):
    """The remote prediction endpoint could not be reached."""


class ProtocolError(EdgemarkError, RuntimeError):
    """The remote prediction endpoint returned a malformed response."""
