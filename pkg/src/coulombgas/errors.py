"""Exception and warning types shared across the package."""


class CoulombGasError(Exception):
    """Base class for all package errors."""


class DomainError(CoulombGasError, ValueError):
    """An argument lies outside the domain of the operation (e.g. x = 0)."""


class CapExceeded(CoulombGasError, ValueError):
    """Requested derivative order is above the configured cap."""


class NumericalError(CoulombGasError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class StepCollapse(CoulombGasError, RuntimeError):
    """Adaptive time-step halving was exhausted."""


class CollisionDetected(CoulombGasError, RuntimeError):
    """Two particles came closer than the collision threshold."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record or {}


class InsufficientSamples(CoulombGasError, ValueError):
    pass


class DegenerateFit(CoulombGasError, ValueError):
    pass


class ConfigError(CoulombGasError, ValueError):
    """Base class for configuration problems."""


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownKey(ConfigError):
    pass


class MissingKey(ConfigError):
    pass


class ValidationError(ConfigError):
    pass


class ConvergenceWarning(UserWarning):
    """MCMC acceptance rate fell outside the usable band."""
