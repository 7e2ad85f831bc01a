"""Decoding-error minimisation for a UAV decode-and-forward relay with short-packet NOMA.

Alternating optimisation over the NOMA powers, the UAV transmit power, the
blocklength split and the UAV position, with baseline schemes and an
experiment harness.
"""
from .ao import Allocation, AoReport, AoStatus, check_feasibility, initialize, solve
from .baselines import SCHEMES, run_scheme, solve_fixed_location, solve_fixed_power, solve_oma
from .config import (
    DirectLink,
    Geometry,
    Scenario,
    SolverSettings,
    SystemParams,
    default_scenario,
    load_scenario,
)
from .dep import BlocklengthPair, DepBreakdown
from .link import PowerTriple

__all__ = [
    "Allocation", "AoReport", "AoStatus", "BlocklengthPair", "DepBreakdown", "DirectLink", "Geometry",
    "PowerTriple", "SCHEMES", "Scenario", "SolverSettings", "SystemParams", "check_feasibility",
    "default_scenario", "initialize", "load_scenario", "run_scheme", "solve", "solve_fixed_location",
    "solve_fixed_power", "solve_oma",
]
