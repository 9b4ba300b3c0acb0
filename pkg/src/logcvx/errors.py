"""Exception hierarchy shared by every module."""


class LogcvxError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(LogcvxError, ValueError):
    pass


class InvariantViolation(LogcvxError):
    pass


class DimensionError(LogcvxError, ValueError):
    pass


class UnsupportedRankError(LogcvxError, NotImplementedError):
    pass


class UndefinedFrequencyError(LogcvxError, ArithmeticError):
    """Raised when N = F/E is requested where E is below the positivity threshold."""


class StepperFailure(LogcvxError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SupportViolation(LogcvxError):
    pass


class SamplingError(LogcvxError):
    """Time sampling too coarse for the requested finite-difference check."""
