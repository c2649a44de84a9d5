"""Speed and state-of-charge co-optimization for a 48V mild-hybrid vehicle."""

__version__ = "0.1.0"

from .dp import CostWeights, GridSpec, ValueTable, extract_trajectory, solve_full_route, transition
from .estimators import EcoDrivingDP, HeuristicDriver, RolloutController
from .mpc import HorizonProblem, solve_horizon
from .powertrain import Plant, default_plant
from .records import RunRecord
from .route import RouteProfile, SpatScenario, TrafficSignal, Waypoint, synthetic_urban_route
from .sim import ExperimentConfig, closed_loop_run, monte_carlo

__all__ = [
    "CostWeights", "EcoDrivingDP", "ExperimentConfig", "GridSpec", "HeuristicDriver", "HorizonProblem",
    "Plant", "RolloutController", "RouteProfile", "RunRecord", "SpatScenario", "TrafficSignal",
    "ValueTable", "Waypoint", "closed_loop_run", "default_plant", "extract_trajectory", "monte_carlo",
    "solve_full_route", "solve_horizon", "synthetic_urban_route", "transition",
]
