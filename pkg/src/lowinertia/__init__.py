"""Modular transient and small-signal simulation of low-inertia power systems."""

from .system import System, load_case, dump_case, CaseError, ValidationError
from .assembly import SystemModel, StateIndex, build_state_index
from .initialization import initialize, solve_powerflow, find_equilibrium, OperatingPoint

__version__ = "0.1.0"

__all__ = [
    "System", "load_case", "dump_case", "CaseError", "ValidationError",
    "SystemModel", "StateIndex", "build_state_index",
    "initialize", "solve_powerflow", "find_equilibrium", "OperatingPoint",
]
