"""Exception types shared across the package."""


class GradBalanceError(Exception):
    """Base class for all package errors."""


class DimensionError(GradBalanceError, ValueError):
    """Operands have incompatible shapes or lengths."""


class ValidationError(GradBalanceError, ValueError):
    """An input violates a documented precondition."""


class ConvergenceError(GradBalanceError, RuntimeError):
    """An iterative solver hit its iteration cap; carries the residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class ParseError(GradBalanceError, ValueError):
    """A data file is malformed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class SchemaError(GradBalanceError, ValueError):
    """A data file is self-inconsistent (e.g. wrong feature dimension)."""


class ConfigError(GradBalanceError, ValueError):
    """A configuration value is invalid or unknown."""


class CombinatorialLimitError(GradBalanceError, ValueError):
    """An exhaustive enumeration would exceed its size bound."""


class TrainingDivergedError(GradBalanceError, RuntimeError):
    """Training loss blew up; carries the last finite parameter vector."""

    def __init__(self, message: str, last_params=None):
        super().__init__(message)
        self.last_params = last_params
