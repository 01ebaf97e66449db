"""Exception types shared across the package."""


class MCMError(Exception):
    """Base class for all package errors."""


class DimensionError(MCMError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ContractError(MCMError, ValueError):
    """An argument violates a documented precondition."""


class GraphStateError(MCMError, RuntimeError):
    """The autodiff graph is in a state that forbids the operation."""


class NumericError(MCMError, ArithmeticError):
    """A non-finite value appeared where the contract requires finite math."""


class ParseError(MCMError, ValueError):
    """A byte stream could not be parsed; carries the failing offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class FormatError(MCMError, ValueError):
    """A file has the wrong magic, version, or structure."""


class DataError(MCMError, ValueError):
    """File contents are structurally valid but semantically inconsistent."""


class ConfigError(MCMError, ValueError):
    """A run configuration is missing, malformed, or out of range."""
