"""Adaptive-bias QAOA and QAOA for random exactly-1 3-SAT on a statevector simulator."""

__version__ = "0.1.0"

from .sat import Formula, GroundSolution, brute_force_ground, generate_instance, sat_oracle
from .statevector import Schedule, build_cost_diagonal, evolve, prepare_initial_state
from .variational import OptimizerConfig, RunRecord, decide_sat, run
from .ofab import OfabConfig, opt_free_run

__all__ = [
    "Formula",
    "GroundSolution",
    "OfabConfig",
    "OptimizerConfig",
    "RunRecord",
    "Schedule",
    "brute_force_ground",
    "build_cost_diagonal",
    "decide_sat",
    "evolve",
    "generate_instance",
    "opt_free_run",
    "prepare_initial_state",
    "run",
    "sat_oracle",
]
