"""Functional ODE observers for linear descriptor systems."""

from .errors import FuncObsError, H1Failed, H2Failed
from .existence import check_full_conditions, check_reduced
from .model import DescriptorSystem, TolerancePolicy, load_system, parse_signal
from .reduction import reduce, split_functional, staircase
from .simulation import SimulationConfig, simulate
from .synthesis import synthesize

__all__ = [
    "DescriptorSystem",
    "FuncObsError",
    "H1Failed",
    "H2Failed",
    "SimulationConfig",
    "TolerancePolicy",
    "check_full_conditions",
    "check_reduced",
    "load_system",
    "parse_signal",
    "reduce",
    "simulate",
    "split_functional",
    "staircase",
    "synthesize",
]
