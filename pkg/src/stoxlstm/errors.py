"""Exception hierarchy shared across the package."""


class StoxError(Exception):
    """Base class for all package errors."""


class ConfigError(StoxError, ValueError):
    """Invalid configuration or hyperparameters."""


class DataError(StoxError, ValueError):
    """Malformed or unusable input data."""


class ContractError(StoxError, ValueError):
    """A caller violated an operation's precondition."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible."""


class NumericError(StoxError, ArithmeticError):
    """Non-finite values appeared during computation.

    ``where`` carries a location hint such as a step index or parameter name.
    """

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} (at {where})")
        self.where = where


class NumericDomainError(NumericError):
    """An operation received arguments outside its domain (log of <= 0, ...)."""
