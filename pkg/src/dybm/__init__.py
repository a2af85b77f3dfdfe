"""Online time-series learning with dynamic Boltzmann machines."""

from .binary import BinaryDyBM, RelaxedDybmParams, StdpDybmParams, stdp_to_relaxed
from .errors import ConfigError, DomainError, DybmError, MalformedInputError, NumericalError
from .functional import FunctionalDyBM, FunctionObservation, KernelConfig
from .gaussian import EchoStateNetwork, GaussianDybmParams, GaussianDyBM
from .hidden import HiddenDybmParams, HiddenDyBM
from .rtrbm import Rtrbm, RtrbmParams
from .series import Metrics, TimeSeries, TrainConfig, load_csv
from .traces import FifoQueue, TraceState

__all__ = [
    "BinaryDyBM", "RelaxedDybmParams", "StdpDybmParams", "stdp_to_relaxed",
    "ConfigError", "DomainError", "DybmError", "MalformedInputError", "NumericalError",
    "FunctionalDyBM", "FunctionObservation", "KernelConfig",
    "EchoStateNetwork", "GaussianDybmParams", "GaussianDyBM",
    "HiddenDybmParams", "HiddenDyBM", "Rtrbm", "RtrbmParams",
    "Metrics", "TimeSeries", "TrainConfig", "load_csv", "FifoQueue", "TraceState",
]
