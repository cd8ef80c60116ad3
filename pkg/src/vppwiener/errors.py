"""Exception hierarchy shared by all stages."""


class VPPError(Exception):
    """Base class for toolkit errors."""


class InvalidParameterError(VPPError, ValueError):
    """A physical or model parameter violates its domain."""


class IntegrationError(VPPError, ArithmeticError):
    """A state rate became non-finite during time integration."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class DataError(VPPError):
    """Input data is malformed, incomplete, or unusable for a fit."""


class StepTooSmallError(DataError):
    """Step amplitude is below the estimated noise floor."""


class DegenerateGridError(DataError):
    """Static-map design matrix is rank deficient."""


class NoValidExperimentsError(DataError):
    """Every step experiment was excluded."""


class ConfigError(VPPError):
    """Configuration could not be parsed or validated."""


class DivergenceError(VPPError, ArithmeticError):
    """Gradient descent cost exploded."""


class OptimizerError(VPPError):
    """Optimizer could not start (e.g. non-finite objective at x0)."""
