"""Estimator-style wrappers around the solvers.

Each class follows the scikit-learn conventions: constructor arguments are
stored unchanged and exposed by ``get_params``; ``fit`` takes a
``RouteProfile`` and sets trailing-underscore attributes; ``score`` is
higher-is-better (the negated cumulative cost).
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dp import CostWeights, GridSpec, ValueTable, extract_trajectory, query_value, solve_full_route
from .mpc import HorizonProblem, solve_horizon
from .powertrain import Plant, default_plant
from .records import RunRecord
from .route import RouteProfile, randomize_departure
from .sim import (DriverParams, ExperimentConfig, baseline_driver_run, calibrate_driver,
                  closed_loop_run, cumulative_cost)
from .validation import (check_gamma, check_positive, check_route, check_stage_index, check_state,
                         check_states, check_value_table)


def _seeds(X) -> list:
    if X is None:
        return [0]
    arr = np.atleast_1d(np.asarray(X))
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("expected a 1-D sequence of integer seeds")
    return [int(s) for s in arr]


class EcoDrivingDP(BaseEstimator):
    """Full-route dynamic programme over (velocity, SoC).

    Parameters
    ----------
    gamma : float
        Fuel weight in (0, 1); time gets ``1 - gamma``.
    grid : GridSpec, optional
        Discretisation; defaults to ``GridSpec()``.
    plant : Plant, optional
        Vehicle model; defaults to ``default_plant()``.
    terminal_soc : float
        Centre of the terminal SoC band.
    initial_soc : float
        SoC at the route start used by ``trajectory`` and ``score``.
    signals_as_stops : bool
        Treat every signal as a stop sign.

    Attributes
    ----------
    value_table_ : ValueTable
    route_ : RouteProfile
    n_stages_ : int
    """

    def __init__(self, gamma: float = 0.7, grid: Optional[GridSpec] = None, plant: Optional[Plant] = None,
                 terminal_soc: float = 0.5, initial_soc: float = 0.5, signals_as_stops: bool = False):
        self.gamma = gamma
        self.grid = grid
        self.plant = plant
        self.terminal_soc = terminal_soc
        self.initial_soc = initial_soc
        self.signals_as_stops = signals_as_stops

    def _plant(self) -> Plant:
        return self.plant or default_plant()

    def fit(self, X: RouteProfile, y=None):
        route = check_route(X)
        vt = solve_full_route(route, self.grid or GridSpec(), CostWeights(check_gamma(self.gamma)),
                              self._plant(), self.terminal_soc, self.signals_as_stops)
        self.value_table_: ValueTable = vt
        self.route_ = route
        self.n_stages_ = vt.n_stages
        return self

    def predict(self, X) -> np.ndarray:
        """Interpolated cost-to-go for rows ``(v, soc)`` at the start or ``(stage, v, soc)``."""
        check_is_fitted(self, "value_table_")
        A = check_states(X)
        vt = self.value_table_
        out = np.empty(len(A))
        for i, row in enumerate(A):
            s, v, soc = (0, *row) if len(row) == 2 else row
            s = check_stage_index(vt, s)
            v, soc = check_state(vt.grid, v, soc)
            out[i] = query_value(vt, s, v, soc)
        return out

    def trajectory(self, initial_state: Optional[tuple] = None) -> RunRecord:
        """Optimal run from ``initial_state`` (default: creep speed, ``initial_soc``)."""
        check_is_fitted(self, "value_table_")
        vt = self.value_table_
        x1 = initial_state or (vt.grid.creep_speed, self.initial_soc)
        return extract_trajectory(vt, check_state(vt.grid, *x1), self._plant())

    def score(self, X=None, y=None) -> float:
        """Negated cumulative cost of the optimal run."""
        return -cumulative_cost(self.trajectory(), self.value_table_.weights)


class RolloutController(BaseEstimator):
    """Receding-horizon controller with the full-route values as terminal cost.

    Parameters
    ----------
    horizon : int
        Look-ahead in stages.
    mode : {"rollout", "rollout+ecoand", "rollout+los"}
        Signal handling in closed loop.
    gamma : float
        Fuel weight used when ``fit`` solves the value table itself.
    grid, plant : optional
        Discretisation and vehicle driven in closed loop.
    model : Plant, optional
        Prediction model; defaults to ``plant``.
    value_table : ValueTable, optional
        Precomputed terminal cost; solved on ``fit`` when absent.
    experiment : ExperimentConfig, optional
        Signal-shaping parameters and initial SoC.
    """

    def __init__(self, horizon: int = 20, mode: str = "rollout", gamma: float = 0.7,
                 grid: Optional[GridSpec] = None, plant: Optional[Plant] = None,
                 model: Optional[Plant] = None, value_table: Optional[ValueTable] = None,
                 experiment: Optional[ExperimentConfig] = None):
        self.horizon = horizon
        self.mode = mode
        self.gamma = gamma
        self.grid = grid
        self.plant = plant
        self.model = model
        self.value_table = value_table
        self.experiment = experiment

    def fit(self, X: RouteProfile, y=None):
        route = check_route(X)
        check_positive("horizon", self.horizon, integer=True)
        if self.mode not in ("rollout", "rollout+ecoand", "rollout+los"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.plant_ = self.plant or default_plant()
        if self.value_table is not None:
            self.value_table_ = check_value_table(self.value_table, route)
        else:
            self.value_table_ = solve_full_route(route, self.grid or GridSpec(),
                                                 CostWeights(check_gamma(self.gamma)), self.plant_)
        self.route_ = route
        self.experiment_ = self.experiment or ExperimentConfig(n_seeds=1, modes=(self.mode,))
        return self

    def predict(self, X) -> np.ndarray:
        """First-step controls for rows ``(stage, v, soc)``.

        Returns an ``(n, 3)`` array of engine torque, BSG torque and braking
        target velocity (NaN when the step does not brake).
        """
        check_is_fitted(self, "value_table_")
        A = check_states(X, 3)
        vt = self.value_table_
        model = self.model or self.plant_
        out = np.empty((len(A), 3))
        for i, (s, v, soc) in enumerate(A):
            s = check_stage_index(vt, s)
            if s >= vt.n_stages:
                raise ValueError("no control at the final position")
            h = min(int(self.horizon), vt.n_stages - s)
            sol = solve_horizon(HorizonProblem(s, h, (v, soc), vt), model, predict=False)
            tv = sol.target_velocity
            out[i] = (sol.eng_torque, sol.bsg_torque, np.nan if tv is None else tv)
        return out

    def run(self, seed: Optional[int] = None) -> RunRecord:
        """Closed-loop run; ``seed`` draws the signal departure offset."""
        check_is_fitted(self, "value_table_")
        scenario = None if seed is None else randomize_departure(self.route_, seed)
        rec = closed_loop_run(self.experiment_, self.route_, scenario, self.plant_, self.value_table_,
                              self.mode, int(self.horizon), self.model)
        return rec

    def score(self, X=None, y=None) -> float:
        """Negated mean cumulative cost over the seeds in ``X`` (default: seed 0)."""
        w = self.value_table_.weights
        return -float(np.mean([cumulative_cost(self.run(s), w) for s in _seeds(X)]))


class HeuristicDriver(BaseEstimator):
    """Rule-based human-like driver.

    Parameters
    ----------
    aggressiveness : float
        Starting aggressiveness in (0, 1].
    los_range : float
        Distance in metres at which signals become visible.
    gamma : float
        Fuel weight used by ``score``.
    calibration_seeds : int
        Number of seeds averaged when ``fit`` matches a target time.
    grid, plant : optional
        Discretisation and vehicle.

    Attributes
    ----------
    driver_ : DriverParams
        Parameters after fitting; ``aggressiveness`` is calibrated when ``fit``
        receives a target mean travel time.
    """

    def __init__(self, aggressiveness: float = 0.6, los_range: float = 100.0, gamma: float = 0.7,
                 calibration_seeds: int = 20, grid: Optional[GridSpec] = None,
                 plant: Optional[Plant] = None):
        self.aggressiveness = aggressiveness
        self.los_range = los_range
        self.gamma = gamma
        self.calibration_seeds = calibration_seeds
        self.grid = grid
        self.plant = plant

    def fit(self, X: RouteProfile, y: Optional[float] = None):
        """Store the route; with ``y`` (seconds) calibrate to that mean travel time."""
        route = check_route(X)
        check_positive("los_range", self.los_range)
        self.route_ = route
        self.plant_ = self.plant or default_plant()
        self.grid_ = self.grid or GridSpec()
        self.config_ = ExperimentConfig(n_seeds=1, modes=("baseline-driver",), los_range=self.los_range)
        if y is None:
            self.driver_ = DriverParams(self.aggressiveness, self.los_range)
        else:
            n = check_positive("calibration_seeds", self.calibration_seeds, integer=True)
            self.driver_ = calibrate_driver(self.config_, route, self.plant_, check_positive("y", y),
                                            range(n), self.grid_)
        return self

    def run(self, seed: Optional[int] = None) -> RunRecord:
        check_is_fitted(self, "driver_")
        scenario = None if seed is None else randomize_departure(self.route_, seed)
        return baseline_driver_run(self.config_, self.route_, scenario, self.plant_, self.driver_, self.grid_)

    def predict(self, X=None) -> np.ndarray:
        """``(n, 2)`` array of fuel in grams and travel time in seconds per seed."""
        recs = [self.run(s) for s in _seeds(X)]
        return np.array([[1000.0 * r.total_fuel, r.travel_time] for r in recs])

    def score(self, X=None, y=None) -> float:
        w = CostWeights(check_gamma(self.gamma))
        return -float(np.mean([cumulative_cost(self.run(s), w) for s in _seeds(X)]))
