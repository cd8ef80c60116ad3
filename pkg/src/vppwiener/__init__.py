"""Wiener-model identification and thrust control of a variable-pitch propeller."""
__version__ = "0.1.0"

from ._accel import backend_name
from .errors import (ConfigError, DataError, DegenerateGridError, DivergenceError,
                     IntegrationError, InvalidParameterError, NoValidExperimentsError,
                     OptimizerError, StepTooSmallError, VPPError)
from .model import (PUBLISHED_FINAL, Normalization, RefInput, WienerParams, WienerState,
                    thrust_output, wiener_derivative)
from .ode import TimeGrid, TimeSeries, simulate

__all__ = [
    "backend_name", "ConfigError", "DataError", "DegenerateGridError", "DivergenceError",
    "IntegrationError", "InvalidParameterError", "NoValidExperimentsError", "OptimizerError",
    "StepTooSmallError", "VPPError", "PUBLISHED_FINAL", "Normalization", "RefInput",
    "WienerParams", "WienerState", "thrust_output", "wiener_derivative", "TimeGrid",
    "TimeSeries", "simulate",
]
