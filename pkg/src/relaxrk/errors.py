"""Exception types shared across the package."""


class RelaxRKError(Exception):
    """Base class for all package errors."""


class NotFound(RelaxRKError, KeyError):
    pass


class DegenerateStep(RelaxRKError):
    """The step update is too small to define a relaxation parameter."""


class NoBracket(RelaxRKError):
    """No sign change of the relaxation residual was found."""


class NonFinite(RelaxRKError, FloatingPointError):
    """A stage or step produced NaN or Inf values."""


class SolverFailure(RelaxRKError):
    """A linear stage solve missed its residual tolerance."""


class SingularMatrix(RelaxRKError):
    pass


class InvalidSpec(RelaxRKError, ValueError):
    pass


class InvalidInput(RelaxRKError, ValueError):
    pass


class ConfigError(InvalidInput):
    """A run configuration field is missing or invalid; ``path`` names the field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
