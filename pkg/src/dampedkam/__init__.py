"""Weak-KAM laboratory for damped Tonelli systems on the torus."""

from .errors import (ConfigError, ConsistencyError, ConvergenceError, DampedKamError, DivergenceError, DomainError,
                     VelocityBoundError)
from .flow import DampedSystem, StepSpec, example_system
from .model import EXAMPLE_LAMBDA, MechanicalHamiltonian, TrigPoly, get_example
from .solver import GridFunction, PeriodicGrid, SolverParams, evolve, lo_step, stationary

__all__ = [
    "ConfigError", "ConsistencyError", "ConvergenceError", "DampedKamError", "DivergenceError", "DomainError",
    "VelocityBoundError", "DampedSystem", "StepSpec", "example_system", "EXAMPLE_LAMBDA", "MechanicalHamiltonian",
    "TrigPoly", "get_example", "GridFunction", "PeriodicGrid", "SolverParams", "evolve", "lo_step", "stationary",
]
__version__ = "0.1.0"
