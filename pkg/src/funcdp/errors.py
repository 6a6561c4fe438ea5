"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the region where an operation is defined."""


class InvalidScheduleError(ValueError):
    """A noise schedule or privacy parameter violates a required inequality."""


class NumericalRankError(ArithmeticError):
    """Gram-Schmidt lost numerical rank even after re-orthogonalization."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    The last residuals are kept on the exception so callers can log them.
    """

    def __init__(self, message, **residuals):
        super().__init__(message)
        self.residuals = residuals


class ConfigError(ValueError):
    """Malformed experiment configuration."""
