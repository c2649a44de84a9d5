"""Receding-horizon rollout on top of a full-route value table.

The horizon problem re-runs the stage backup over ``N_H`` positions with the
full-route values as terminal cost, then takes the one-step argmin at the
actual (off-grid) state. Effective per-stage speed bounds come from the
signal-approach shaper (SPaT timing) or the line-of-sight rule (phase only).
"""
from __future__ import annotations

import math
import weakref
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .dp import (
    CostWeights,
    Decision,
    StageProblem,
    ValueTable,
    backup_stage,
    greedy_step,
    make_stage,
    transition,
)
from .exceptions import GridBounds, HorizonInfeasible, InfeasibleTransition
from .powertrain import Plant, engine_torque_limits
from .route import GREEN

_TOL = 1e-9


# --------------------------------------------------------------------------
# horizon problem


@dataclass(frozen=True, eq=False)
class HorizonProblem:
    """Look-ahead problem at stage ``start`` over ``horizon`` stages.

    ``bounds`` optionally overrides the speed window of stages
    ``start + 1 .. start + horizon`` (one ``(lo, hi)`` pair or ``None`` each);
    overrides are intersected with the route limits. ``stops`` lists absolute
    stage indices that are treated as stops inside the horizon.
    """

    start: int
    horizon: int
    state: tuple
    value_table: ValueTable
    bounds: Optional[tuple] = None
    stops: frozenset = frozenset()

    def __post_init__(self):
        n = self.value_table.n_stages
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0 <= self.start < n or self.start + self.horizon > n:
            raise ValueError(f"stages {self.start}..{self.start + self.horizon} exceed the route (N={n})")
        if self.bounds is not None:
            object.__setattr__(self, "bounds", tuple(self.bounds))
            if len(self.bounds) != self.horizon:
                raise ValueError("bounds needs one entry per horizon stage")
        object.__setattr__(self, "stops", frozenset(int(s) for s in self.stops))
        object.__setattr__(self, "state", (float(self.state[0]), float(self.state[1])))

    def stages(self, weights: Optional[CostWeights] = None) -> list:
        """Effective stage problems for ``start .. start + horizon``."""
        vt = self.value_table
        weights = weights or vt.weights
        n = vt.n_stages
        out = [vt.stages[self.start]]
        for j in range(1, self.horizon + 1):
            idx = self.start + j
            base = vt.stages[idx]
            override = None if self.bounds is None else self.bounds[j - 1]
            stop = idx in self.stops
            if override is None and not stop:
                out.append(base)
                continue
            lo, hi = base.v_min, base.v_max
            if override is not None:
                lo = max(lo, float(override[0]))
                hi = min(hi, float(override[1]))
                lo = min(lo, hi)
            dwell = base.dwell
            if stop and not base.stop:
                dwell = weights.stop_dwell if idx < n else 0.0
            stage = make_stage(vt.grid, idx, base.position, base.step, base.grade, lo, hi,
                               stop or base.stop, dwell)
            out.append(base if stage.signature() == base.signature() else stage)
        return out


@dataclass(frozen=True)
class HorizonSolution:
    """First-step controls and the predicted horizon trajectory."""

    eng_torque: float
    bsg_torque: float
    target_velocity: Optional[float]
    cost_to_go: float
    decision: Decision
    predicted_velocity: np.ndarray = field(default_factory=lambda: np.empty(0))
    predicted_soc: np.ndarray = field(default_factory=lambda: np.empty(0))


class _LRU(OrderedDict):
    def __init__(self, size):
        super().__init__()
        self.size = size

    def get(self, key):
        hit = super().get(key)
        if hit is not None:
            self.move_to_end(key)
        return hit

    def put(self, key, value):
        self[key] = value
        if len(self) > self.size:
            self.popitem(last=False)


_BACKUPS: "weakref.WeakKeyDictionary[ValueTable, _LRU]" = weakref.WeakKeyDictionary()


def _stage_tables(vt: ValueTable, model: Plant, weights: CostWeights, stages: list) -> list:
    """Cost-to-go tables for ``stages[1:]``; the last one is the full-route value.

    A stage whose geometry, successor bounds and tail all match the full-route
    problem reuses the stored table; other backups are cached on the chain of
    stage signatures behind them.
    """
    cache = _BACKUPS.setdefault(vt, _LRU(4096))
    native = model.fingerprint() == vt.plant_hash and weights == vt.weights
    model_key = (model.fingerprint(), weights)
    h = len(stages) - 1
    last = stages[h].index
    tables = [None] * (h + 1)
    tables[h] = vt.values[last]
    key = ("dp", last)
    for j in range(h - 1, 0, -1):
        st, nxt = stages[j], stages[j + 1]
        if native and key == ("dp", nxt.index) and st is vt.stages[st.index] \
                and (nxt.v_min, nxt.v_max) == (vt.stages[nxt.index].v_min, vt.stages[nxt.index].v_max):
            key = ("dp", st.index)
            tables[j] = vt.values[st.index]
            continue
        key = hash((model_key, st.signature(), nxt.v_min, nxt.v_max, key))
        V = cache.get(key)
        if V is None:
            V, _ = backup_stage(model, vt.grid, weights, st, nxt, tables[j + 1])
            V.setflags(write=False)
            cache.put(key, V)
        if not np.isfinite(V).any():
            raise HorizonInfeasible(st.index)
        tables[j] = V
    return tables


def _check_hull(vt: ValueTable, v: float, soc: float):
    for x, axis, name in ((v, vt.grid.velocity_nodes, "velocity"), (soc, vt.grid.soc_nodes, "SoC")):
        if not axis[0] - _TOL <= x <= axis[-1] + _TOL:
            raise GridBounds(f"{name} {x} outside grid [{axis[0]}, {axis[-1]}]")


def solve_horizon(problem: HorizonProblem, plant: Plant, weights: Optional[CostWeights] = None,
                  predict: bool = True) -> HorizonSolution:
    """Backward recursion over the horizon, then the argmin at the current state.

    ``plant`` is the prediction model used for stage costs and transitions;
    the terminal cost is always the stored full-route value.
    """
    vt = problem.value_table
    weights = weights or vt.weights
    v, soc = problem.state
    _check_hull(vt, v, soc)
    stages = problem.stages(weights)
    tables = _stage_tables(vt, plant, weights, stages)
    dec = greedy_step(plant, vt.grid, weights, stages[0], stages[1], tables[1], v, soc)
    if dec is None:
        raise HorizonInfeasible(problem.start)
    pv, px = np.empty(0), np.empty(0)
    if predict:
        pv, px = _predict(plant, vt, weights, stages, tables, v, soc, dec)
    return HorizonSolution(dec.eng_torque, dec.bsg_torque, dec.target_velocity, dec.value, dec, pv, px)


def _predict(plant, vt, weights, stages, tables, v, soc, first):
    vs, xs = [v], [soc]
    dec = first
    for j in range(len(stages) - 1):
        if j > 0:
            dec = greedy_step(plant, vt.grid, weights, stages[j], stages[j + 1], tables[j + 1], v, soc)
            if dec is None:
                break
        v, soc = dec.v_next, dec.soc_next
        vs.append(v)
        xs.append(soc)
    return np.array(vs), np.array(xs)


def comfort_braking(plant: Plant, vt: ValueTable, stage: StageProblem, v: float, soc: float,
                    a_min: Optional[float] = None) -> Decision:
    """Fallback: engine at its torque floor, BSG idle, brake at the comfort limit."""
    grid = vt.grid
    a_min = grid.accel_bounds[0] if a_min is None else a_min
    t_lo, t_hi = engine_torque_limits(np.array([v]), plant.maps, plant.vehicle)
    target = math.sqrt(max(grid.creep_speed**2, v * v + 2.0 * a_min * stage.step))
    for T_eng in grid.eng_torques:
        if not t_lo[0] - _TOL <= T_eng <= t_hi[0] + _TOL:
            continue
        try:
            res = transition((v, soc), (T_eng, 0.0), stage.step, plant, stage.grade, 0.0, stage.dwell)
        except InfeasibleTransition:
            continue
        if res.velocity <= target:
            return Decision(-1, math.inf, float(T_eng), 0.0, None, res.velocity, res.soc)
        return Decision(-1, math.inf, float(T_eng), 0.0, target, target, res.soc)
    raise HorizonInfeasible(stage.index, "no engine torque keeps the vehicle moving")


# --------------------------------------------------------------------------
# signal approach


@dataclass(frozen=True)
class GreenCheck:
    feasible: bool
    window: Optional[tuple]  # reachable part of the chosen green window
    earliest: float
    latest: float


@dataclass(frozen=True)
class EcoAndDirective:
    """Offsets applied to the route speed limits up to a signal."""

    v_off_min: float = 0.0
    v_off_max: float = 0.0
    feasible: bool = True
    treat_as_stop: bool = False
    target_time: Optional[float] = None
    arrival_window: Optional[tuple] = None

    def __post_init__(self):
        if self.v_off_min < 0 or self.v_off_max < 0:
            raise ValueError("offsets must be >= 0")

    def window(self, v_min: float, v_max: float) -> tuple:
        return v_min + self.v_off_min, v_max - self.v_off_max


def _travel_time(v0, dist, v_cruise, accel):
    """Time to cover ``dist`` ramping from ``v0`` to ``v_cruise`` at ``|accel|`` and then cruising."""
    if abs(v_cruise - v0) < 1e-12:
        return dist / v0
    a = abs(accel) if v_cruise > v0 else -abs(accel)
    d_ramp = (v_cruise**2 - v0**2) / (2.0 * a)
    if dist <= d_ramp:
        v_end = math.sqrt(max(v0 * v0 + 2.0 * a * dist, 0.0))
        return (v_end - v0) / a
    return (v_cruise - v0) / a + (dist - d_ramp) / v_cruise


def cruise_speed_for_arrival(v_now, dist, t_arrive, accel, v_max) -> float:
    """Cruise speed in ``(0, v_max]`` that, ramping from ``v_now`` at ``|accel|``, arrives at ``t_arrive``.

    Returns ``v_max`` when even that arrives later and the smallest bracket
    value when every candidate arrives earlier.
    """
    v0 = max(v_now, 1e-6)

    def late(vc):
        return _travel_time(v0, dist, vc, accel) - t_arrive

    lo, hi = 1e-3, float(v_max)
    if late(hi) >= 0:
        return hi
    if late(lo) <= 0:
        return lo
    return float(optimize.brentq(late, lo, hi, xtol=1e-9))


def arrival_bounds(v_now, dist, v_bounds, a_bounds):
    """Earliest and latest arrival over ``dist`` under speed and acceleration limits."""
    v_lo, v_hi = v_bounds
    a_min, a_max = a_bounds
    v0 = max(v_now, 1e-6)
    earliest = _travel_time(v0, dist, v_hi, a_max if v_hi >= v0 else a_min)
    latest = _travel_time(v0, dist, v_lo, a_min if v_lo <= v0 else a_max)
    return earliest, latest


def pass_in_green_feasible(v_now, dist, windows: Sequence, v_bounds, a_bounds) -> GreenCheck:
    """Earliest green window that intersects the reachable arrival interval."""
    if dist <= 0:
        raise ValueError("dist must be > 0")
    earliest, latest = arrival_bounds(v_now, dist, v_bounds, a_bounds)
    for t_open, t_close in sorted(windows):
        lo, hi = max(t_open, earliest), min(t_close, latest)
        if lo <= hi:
            return GreenCheck(True, (lo, hi), earliest, latest)
    return GreenCheck(False, None, earliest, latest)


def eco_and_offsets(windows: Sequence, v_now, dist, limits, accel_bounds, min_speed=0.0,
                    margin=2.0) -> EcoAndDirective:
    """Speed-limit offsets that keep the arrival inside a reachable green window.

    ``windows`` are green intervals relative to now. The accepted arrival
    interval is the target window shrunk by ``margin`` seconds at each edge
    that is not already open (at most a quarter of its width). The upper
    limit drops only when driving at the route limit would arrive before
    that interval, and then to the mean speed reaching its opening edge; the
    lower limit rises only when the current speed would arrive after it, to
    the mean speed reaching its closing edge. ``min_speed`` bounds the
    slowest approach considered; a signal with no reachable window is
    treated as a stop.
    """
    v_min, v_max = limits
    v_lo = min(max(v_min, min_speed), v_max)
    check = pass_in_green_feasible(v_now, dist, windows, (v_lo, v_max), accel_bounds)
    if not check.feasible:
        return EcoAndDirective(feasible=False, treat_as_stop=True)
    lo, hi = check.window
    t_open, t_close = next(w for w in sorted(windows) if w[0] <= lo <= w[1])
    pad = min(margin, 0.25 * (hi - lo))
    t_early = lo + pad if t_open > 0 else -math.inf
    t_late = hi - pad if math.isfinite(hi) else math.inf
    t_cur = dist / max(v_now, 1e-6)
    off_max = off_min = 0.0
    if check.earliest < t_early:
        off_max = float(np.clip(v_max - dist / t_early, 0.0, v_max - v_min))
    if t_cur > t_late:
        off_min = float(np.clip(dist / t_late - v_min, 0.0, v_max - v_min - off_max))
    t_mid = 0.5 * (lo + hi) if math.isfinite(hi) else lo
    return EcoAndDirective(v_off_min=off_min, v_off_max=off_max, target_time=t_mid,
                           arrival_window=(t_early, t_late))


def shape_constraints(v_now, target_limit, steps, a_min) -> np.ndarray:
    """Upper speed bounds that fall from ``v_now`` at ``|a_min|`` and hold at ``target_limit``.

    Entry ``j`` bounds the speed after ``steps[:j + 1]``.
    """
    steps = np.atleast_1d(np.asarray(steps, dtype=float))
    out = np.empty(len(steps))
    b = float(v_now)
    for j, dd in enumerate(steps):
        b = math.sqrt(max(b * b - 2.0 * abs(a_min) * dd, 0.0))
        b = max(b, target_limit)
        out[j] = b
    return out


def ramp_constraints(v_now, target_limit, steps, accel) -> np.ndarray:
    """Lower speed bounds that rise from ``v_now`` at ``accel`` and hold at ``target_limit``."""
    steps = np.atleast_1d(np.asarray(steps, dtype=float))
    if v_now >= target_limit:
        return np.full(len(steps), float(target_limit))
    out = np.empty(len(steps))
    b = float(v_now)
    for j, dd in enumerate(steps):
        b = min(math.sqrt(b * b + 2.0 * abs(accel) * dd), target_limit)
        out[j] = b
    return out


def los_constraints(phase: str, dist, los_range=100.0) -> EcoAndDirective:
    """Phase-only rule: beyond line of sight, or not green, the signal is a stop."""
    if dist > los_range or phase != GREEN:
        return EcoAndDirective(feasible=False, treat_as_stop=True)
    return EcoAndDirective()
