"""Welfare-maximizing regulation allocation for an aggregator and its EV fleet."""

from .config import ExperimentConfig, load_config, parse_config
from .model import EVParams, Fleet, FleetState, InvariantViolation, UtilityModel
from .queues import DerivedConstants, derive_constants
from .solvers import CoupledProblem, oracle_grid, solve_coupled
from .stochastic import ScenarioConfig, ScenarioGenerator
from .wmra import greedy_step, run_controller, wmra_step

__all__ = [
    "CoupledProblem", "DerivedConstants", "EVParams", "ExperimentConfig", "Fleet",
    "FleetState", "InvariantViolation", "ScenarioConfig", "ScenarioGenerator",
    "UtilityModel", "derive_constants", "greedy_step", "load_config", "oracle_grid",
    "parse_config", "run_controller", "solve_coupled", "wmra_step",
]
