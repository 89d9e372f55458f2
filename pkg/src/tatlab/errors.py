"""Exception types shared across the package."""


class TatLabError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TatLabError):
    """A configuration key is missing, unknown, or malformed."""


class CFLError(ConfigError):
    """Time step violates the stability constraint of the wave scheme."""


class ValidationError(TatLabError):
    """An input violates a documented invariant or precondition."""


class OutOfDomainError(ValidationError):
    """A point falls outside the supported evaluation region."""


class DegenerateDirectionError(ValidationError):
    """A ray was requested with a zero initial covector."""


class BlowUpError(TatLabError):
    """The wave solver produced non-finite values."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite field value at step {step}")


class GridFormatError(TatLabError):
    """A binary grid file is malformed."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class InsufficientDataError(TatLabError):
    """Too few usable values for a statistical fit."""


class ConditioningError(TatLabError):
    """A Gram matrix lost positive definiteness to discretization error."""


class DivergenceError(TatLabError):
    """An iterative solver increased its residual repeatedly."""

    def __init__(self, step_size: float, iteration: int):
        self.step_size = step_size
        self.iteration = iteration
        super().__init__(
            f"residual increased over 3 consecutive iterations "
            f"(step size {step_size:g}, iteration {iteration})"
        )


class UndefinedRatioError(TatLabError):
    """A normalized quantity was requested for identically-zero data."""


class UnsupportedOrderError(TatLabError):
    """A Sobolev order outside the supported range was requested."""
