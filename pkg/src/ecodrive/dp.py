"""Spatial-domain dynamic programming over (velocity, SoC).

The route is cut into stages of length ``distance_step``. At each stage the
controls are an engine torque and a BSG torque on fixed grids. The friction
brake is not a control: when the powertrain floor (lowest engine torque) still
leaves the vehicle faster than a velocity node, a braked variant of that
action targets the node and the brake force is derived from it.

Successor values are read from the next stage's table by bilinear
interpolation; a successor is infeasible (+inf) if it leaves the grid hull or
any corner with nonzero weight is infeasible.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from ._tables import as_tuple, cell_position, uniform_nodes
from .exceptions import EmptyFeasibleSet, GridBounds, InfeasibleTransition
from .powertrain import (
    Plant,
    battery_current,
    bsg_power,
    bsg_torque_limits,
    default_plant,
    driveline_speeds,
    engine_torque_limits,
    fuel_rate,
    gear_select,
    road_load,
    wheel_force,
)
from .records import RunRecord
from .route import RouteProfile, limits_at

# cruise fuel rate of the synthetic maps at 13 m/s on a flat road, rounded
DEFAULT_MDOT_NORM = 4.0e-4
INF = np.inf
_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Discretization of distance, states and controls."""

    distance_step: float = 10.0
    velocity_step: float = 1.36
    soc_step: float = 0.02
    eng_torque_step: float = 13.2
    bsg_torque_step: float = 4.2
    velocity_bounds: tuple = (0.5, 21.0)
    soc_bounds: tuple = (0.40, 0.60)
    accel_bounds: tuple = (-2.4, 2.4)
    eng_torque_bounds: tuple = (-26.4, 250.0)
    bsg_torque_bounds: tuple = (-25.2, 25.2)
    distance_steps: Optional[tuple] = None
    braking: bool = True

    def __post_init__(self):
        for name in ("velocity_bounds", "soc_bounds", "accel_bounds",
                     "eng_torque_bounds", "bsg_torque_bounds"):
            value = as_tuple(getattr(self, name))
            if len(value) != 2 or not value[0] < value[1]:
                raise ValueError(f"{name} must be an ordered pair (lo, hi)")
            object.__setattr__(self, name, value)
        for name in ("distance_step", "velocity_step", "soc_step", "eng_torque_step", "bsg_torque_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.distance_steps is not None:
            steps = as_tuple(self.distance_steps)
            if not steps or min(steps) <= 0:
                raise ValueError("distance_steps must be nonempty and positive")
            object.__setattr__(self, "distance_steps", steps)
        if not self.accel_bounds[0] < 0 < self.accel_bounds[1]:
            raise ValueError("accel_bounds must straddle zero")
        if self.velocity_bounds[0] <= 0:
            raise ValueError("the lowest velocity node must be > 0")
        if len(self.velocity_nodes) < 2 or len(self.soc_nodes) < 2:
            raise ValueError("velocity and SoC grids need at least two nodes")

    @property
    def velocity_nodes(self) -> np.ndarray:
        return uniform_nodes(*self.velocity_bounds, self.velocity_step)

    @property
    def soc_nodes(self) -> np.ndarray:
        return uniform_nodes(*self.soc_bounds, self.soc_step)

    @property
    def eng_torques(self) -> np.ndarray:
        return uniform_nodes(*self.eng_torque_bounds, self.eng_torque_step)

    @property
    def bsg_torques(self) -> np.ndarray:
        return uniform_nodes(*self.bsg_torque_bounds, self.bsg_torque_step)

    @property
    def creep_speed(self) -> float:
        return self.velocity_bounds[0]

    def positions(self, length: float) -> np.ndarray:
        """Stage positions from 0 to ``length`` inclusive."""
        if self.distance_steps is not None:
            pos = np.concatenate([[0.0], np.cumsum(self.distance_steps)])
            if not math.isclose(pos[-1], length, rel_tol=1e-9, abs_tol=1e-6):
                raise ValueError(f"distance_steps sum to {pos[-1]} m, route is {length} m")
            pos[-1] = length
            return pos
        n = int(math.ceil(length / self.distance_step - 1e-9))
        return np.minimum(np.arange(n + 1) * self.distance_step, length)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class CostWeights:
    """Fuel/time tradeoff of the stage cost."""

    gamma: float = 0.7
    mdot_norm: float = DEFAULT_MDOT_NORM
    stop_dwell: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if not self.mdot_norm > 0:
            raise ValueError("mdot_norm must be > 0")
        if self.stop_dwell < 0:
            raise ValueError("stop_dwell must be >= 0")


def stage_cost(fuel_rate, t_s, w):
    """Weighted fuel and time over a stage: ``(g*mdot/mdot_norm + 1 - g) * t_s``.

    ``w`` is a :class:`CostWeights` or a bare ``(gamma, mdot_norm)`` pair, so
    the limits ``gamma -> 0`` and ``gamma -> 1`` can be evaluated directly.
    """
    gamma, norm = (w.gamma, w.mdot_norm) if isinstance(w, CostWeights) else w
    t_s = np.asarray(t_s, dtype=float)
    if np.any(t_s <= 0):
        raise ValueError("stage time must be > 0")
    return (gamma * np.asarray(fuel_rate, dtype=float) / norm + (1.0 - gamma)) * t_s


class StepResult(NamedTuple):
    velocity: float
    soc: float
    time: float  # stage time including any dwell
    fuel: float  # kg
    fuel_rate: float
    current: float
    moving_time: float


def transition(state, controls, step, plant: Plant, grade=0.0, brake_force=0.0, dwell=0.0) -> StepResult:
    """Advance ``(v, soc)`` over ``step`` metres under ``(T_eng, T_bsg)``.

    ``dwell`` seconds of standstill (engine off, auxiliary load only) are
    spent before the vehicle moves off.
    """
    v, soc = float(state[0]), float(state[1])
    T_eng, T_bsg = float(controls[0]), float(controls[1])
    if v <= 0:
        raise ValueError("the spatial transition needs v > 0")
    p, maps, b = plant.vehicle, plant.maps, plant.battery
    force = float(wheel_force(T_eng, T_bsg, v, brake_force, maps, p)) - float(road_load(v, grade, p))
    v2 = v * v + 2.0 * step * force / p.mass
    if v2 < 0:
        raise InfeasibleTransition(f"v_next^2 = {v2:.4g} < 0")
    v_next = math.sqrt(v2)
    t_move = 2.0 * step / (v + v_next)
    omega, _, gear = driveline_speeds(0.5 * (v + v_next), T_eng, maps, p, gear=gear_select(v, maps))
    mdot = float(fuel_rate(gear, omega, T_eng, maps))
    current = float(battery_current(soc, bsg_power(T_bsg, omega, maps, p), b))
    soc_next = soc - (t_move * current + dwell * b.bias_current) / b.capacity_coulomb
    return StepResult(v_next, soc_next, t_move + dwell, mdot * t_move, mdot, current, t_move)


# --------------------------------------------------------------------------
# stages


@dataclass(frozen=True)
class StageProblem:
    """Admissible sets at one position.

    ``v_min``/``v_max`` bound the continuous speed at this position;
    ``node_lo``..``node_hi`` are the velocity nodes whose values are needed
    to interpolate inside those bounds. ``dwell`` is standstill time spent
    when leaving the position.
    """

    index: int
    position: float
    step: float
    grade: float
    v_min: float
    v_max: float
    node_lo: int
    node_hi: int
    stop: bool = False
    dwell: float = 0.0

    def signature(self) -> tuple:
        return (self.index, self.step, self.grade, self.v_min, self.v_max,
                self.node_lo, self.node_hi, self.stop, self.dwell)


def node_range(grid: GridSpec, v_lo: float, v_hi: float) -> tuple:
    """Smallest node index range whose hull covers ``[v_lo, v_hi]``."""
    nodes = grid.velocity_nodes
    n = len(nodes)
    r_lo = (v_lo - nodes[0]) / grid.velocity_step
    r_hi = (v_hi - nodes[0]) / grid.velocity_step
    lo = int(np.clip(math.floor(r_lo + _TOL), 0, n - 1))
    hi = int(np.clip(math.ceil(r_hi - _TOL), 0, n - 1))
    return lo, max(lo, hi)


def make_stage(grid, index, position, step, grade, v_min, v_max, stop=False, dwell=0.0) -> StageProblem:
    if stop:
        v_min = v_max = grid.creep_speed
    v_min = max(v_min, grid.creep_speed)
    v_max = min(v_max, grid.velocity_nodes[-1])
    lo, hi = node_range(grid, v_min, v_max)
    return StageProblem(index=index, position=float(position), step=float(step), grade=float(grade),
                        v_min=float(v_min), v_max=float(v_max), node_lo=lo, node_hi=hi,
                        stop=bool(stop), dwell=float(dwell))


def snap_index(positions: np.ndarray, d: float) -> int:
    return int(np.argmin(np.abs(positions - d)))


def build_stages(route: RouteProfile, grid: GridSpec, weights: CostWeights,
                 signals_as_stops: bool = False) -> tuple:
    """Stage problems for every position of the route (the last has ``step == 0``)."""
    pos = grid.positions(route.length)
    n = len(pos) - 1
    stop_points = list(route.stop_signs)
    if signals_as_stops:
        stop_points += [s.position for s in route.signals]
    stop_idx = {snap_index(pos, d) for d in stop_points}
    stages = []
    for s in range(n + 1):
        v_min, v_max, _ = limits_at(route, pos[s])
        grade = limits_at(route, pos[s])[2] if s < n else 0.0
        step = pos[s + 1] - pos[s] if s < n else 0.0
        stop = s in stop_idx and s > 0
        dwell = weights.stop_dwell if stop and s < n else 0.0
        stages.append(make_stage(grid, s, pos[s], step, grade, v_min, v_max, stop, dwell))
    return tuple(stages)


# --------------------------------------------------------------------------
# action sets


@lru_cache(maxsize=32)
def _layout(n_eng: int, n_bsg: int, n_targets: int, braking: bool):
    eng, bsg, target = [], [], []
    for ie in range(n_eng):
        for ib in range(n_bsg):
            eng.append(ie)
            bsg.append(ib)
            target.append(-1)
            if braking and ie == 0:
                for j in range(n_targets):
                    eng.append(ie)
                    bsg.append(ib)
                    target.append(j)
    arrs = tuple(np.array(a, dtype=np.int64) for a in (eng, bsg, target))
    for a in arrs:
        a.setflags(write=False)
    return arrs


def action_layout(grid: GridSpec):
    """(engine index, BSG index, brake target node or -1) per action, in tie-break order."""
    return _layout(len(grid.eng_torques), len(grid.bsg_torques), len(grid.velocity_nodes), grid.braking)


@dataclass(frozen=True, eq=False)
class ActionSet:
    """All actions evaluated at a vector of speeds for one stage geometry."""

    velocity: np.ndarray  # (m,)
    eng_torque: np.ndarray  # (n_a,)
    bsg_torque: np.ndarray  # (n_a,)
    target: np.ndarray  # (n_a,) node index or -1
    v_next: np.ndarray  # (m, n_a)
    t_stage: np.ndarray
    fuel_rate: np.ndarray
    brake_force: np.ndarray
    power: np.ndarray
    valid: np.ndarray

    def currents(self, soc, plant: Plant) -> np.ndarray:
        """Battery current incl. bias at each SoC, shape ``(m, n_a, len(soc))``; +inf if unreachable."""
        b = plant.battery
        soc = np.atleast_1d(np.asarray(soc, dtype=float))
        P = self.power[:, :, None]
        p_max = (b.open_circuit_voltage(soc) ** 2 / (4.0 * b.resistance))[None, None, :]
        over = P > p_max
        current = battery_current(soc[None, None, :], np.where(over, 0.0, P), b)
        return np.where(over, INF, current)

    def stage_costs(self, weights: CostWeights, dwell: float = 0.0) -> np.ndarray:
        g = weights.gamma
        return (g * self.fuel_rate / weights.mdot_norm + (1.0 - g)) * self.t_stage + (1.0 - g) * dwell


def action_set(plant: Plant, grid: GridSpec, velocity, step: float, grade: float) -> ActionSet:
    p, maps = plant.vehicle, plant.maps
    v = np.atleast_1d(np.asarray(velocity, dtype=float))
    ie, ib, tj = action_layout(grid)
    E, B, nodes = grid.eng_torques, grid.bsg_torques, grid.velocity_nodes
    Te = E[ie][None, :]
    Tb = B[ib][None, :]
    vv = v[:, None]
    t_lo, t_hi = engine_torque_limits(v, maps, p)
    b_lo, b_hi = bsg_torque_limits(v, maps, p)
    valid = ((Te >= t_lo[:, None] - _TOL) & (Te <= t_hi[:, None] + _TOL)
             & (Tb >= b_lo[:, None] - _TOL) & (Tb <= b_hi[:, None] + _TOL))
    net = wheel_force(Te, Tb, vv, 0.0, maps, p) - road_load(vv, grade, p)
    v2_free = vv**2 + 2.0 * step * net / p.mass
    braked = (tj >= 0)[None, :]
    v_tgt = nodes[np.maximum(tj, 0)][None, :]
    v2 = np.where(braked, v_tgt**2, v2_free)
    brake = np.where(braked, net - p.mass * (v_tgt**2 - vv**2) / (2.0 * step), 0.0)
    valid &= v2 > 0
    valid &= ~braked | (brake > _TOL)
    accel = (v2 - vv**2) / (2.0 * step)
    a_min, a_max = grid.accel_bounds
    valid &= (accel >= a_min - 1e-12) & (accel <= a_max + 1e-12)
    v_next = np.sqrt(np.maximum(v2, 0.0))
    t_stage = 2.0 * step / (vv + v_next)
    # operating point at the stage mean speed, gear held at its entry value
    omega, _, gear = driveline_speeds(0.5 * (vv + v_next), Te, maps, p, gear=gear_select(vv, maps))
    mdot = fuel_rate(gear, omega, Te, maps)
    power = bsg_power(Tb, omega, maps, p)
    return ActionSet(velocity=v, eng_torque=E[ie], bsg_torque=B[ib], target=tj,
                     v_next=v_next, t_stage=t_stage, fuel_rate=mdot,
                     brake_force=np.maximum(brake, 0.0), power=power, valid=valid)


_NODE_ACTIONS: dict = {}


def node_actions(plant: Plant, grid: GridSpec, step: float, grade: float) -> ActionSet:
    key = (plant.fingerprint(), grid, float(step), float(grade))
    hit = _NODE_ACTIONS.get(key)
    if hit is None:
        if len(_NODE_ACTIONS) > 256:
            _NODE_ACTIONS.clear()
        hit = action_set(plant, grid, grid.velocity_nodes, step, grade)
        _NODE_ACTIONS[key] = hit
    return hit


# --------------------------------------------------------------------------
# backups


class Decision(NamedTuple):
    action: int
    value: float
    eng_torque: float
    bsg_torque: float
    target_velocity: Optional[float]
    v_next: float
    soc_next: float


def _soc_window(grid: GridSpec, plant: Plant):
    lo = max(grid.soc_bounds[0], plant.battery.soc_min)
    hi = min(grid.soc_bounds[1], plant.battery.soc_max)
    return lo, hi


def backup_stage(plant: Plant, grid: GridSpec, weights: CostWeights, stage: StageProblem,
                 next_stage: StageProblem, V_next: np.ndarray):
    """Bellman backup of ``V_next`` onto the velocity/SoC nodes of ``stage``."""
    acts = node_actions(plant, grid, stage.step, stage.grade)
    soc = grid.soc_nodes
    b = plant.battery
    soc_lo, soc_hi = _soc_window(grid, plant)
    V, arg = _kernels.backup(
        V_next, grid.velocity_nodes[0], grid.velocity_step, soc[0], grid.soc_step, soc,
        acts.stage_costs(weights, stage.dwell), acts.v_next, acts.t_stage,
        _node_currents(acts, plant, grid), acts.valid, stage.node_lo, stage.node_hi,
        next_stage.v_min, next_stage.v_max, b.bias_current * stage.dwell / b.capacity_coulomb,
        1.0 / b.capacity_coulomb, soc_lo, soc_hi)
    return V, arg


_NODE_CURRENTS: dict = {}


def _node_currents(acts: ActionSet, plant: Plant, grid: GridSpec):
    key = id(acts)
    hit = _NODE_CURRENTS.get(key)
    if hit is None or hit[0] is not acts:
        if len(_NODE_CURRENTS) > 256:
            _NODE_CURRENTS.clear()
        hit = (acts, acts.currents(grid.soc_nodes, plant))
        _NODE_CURRENTS[key] = hit
    return hit[1]


def greedy_step(plant: Plant, grid: GridSpec, weights: CostWeights, stage: StageProblem,
                next_stage: StageProblem, V_next: np.ndarray, v: float, soc: float) -> Optional[Decision]:
    """One-step lookahead argmin at an arbitrary state; ``None`` if nothing is admissible."""
    acts = action_set(plant, grid, [v], stage.step, stage.grade)
    b = plant.battery
    soc_lo, soc_hi = _soc_window(grid, plant)
    x = np.array([soc], dtype=float)
    V, arg = _kernels.backup(
        V_next, grid.velocity_nodes[0], grid.velocity_step, grid.soc_nodes[0], grid.soc_step, x,
        acts.stage_costs(weights, stage.dwell), acts.v_next, acts.t_stage,
        acts.currents(x, plant), acts.valid, 0, 0,
        next_stage.v_min, next_stage.v_max, b.bias_current * stage.dwell / b.capacity_coulomb,
        1.0 / b.capacity_coulomb, soc_lo, soc_hi)
    a = int(arg[0, 0])
    if a < 0:
        return None
    tj = int(acts.target[a])
    current = acts.currents(x, plant)[0, a, 0]
    soc_next = soc - (acts.t_stage[0, a] * current + b.bias_current * stage.dwell) / b.capacity_coulomb
    return Decision(a, float(V[0, 0]), float(acts.eng_torque[a]), float(acts.bsg_torque[a]),
                    float(grid.velocity_nodes[tj]) if tj >= 0 else None,
                    float(acts.v_next[0, a]), float(soc_next))


def advance(plant: Plant, stage: StageProblem, v: float, soc: float, decision: Decision,
            dwell: Optional[float] = None, creep: Optional[float] = None) -> tuple:
    """Apply a decision to ``plant``; the brake force realizes the target speed on this plant.

    With ``creep`` set, a decision that would leave this plant slower than
    ``creep`` (possible when the plant differs from the model the decision was
    made on) gets the smallest engine torque increase that keeps it rolling,
    braked to exactly ``creep``. Returns ``(StepResult, brake_force, T_eng)``.
    """
    dwell = stage.dwell if dwell is None else dwell
    p, maps = plant.vehicle, plant.maps
    T_eng, target = decision.eng_torque, decision.target_velocity
    net = (float(wheel_force(T_eng, decision.bsg_torque, v, 0.0, maps, p))
           - float(road_load(v, stage.grade, p)))
    if creep is not None and v * v + 2.0 * stage.step * net / p.mass < creep * creep:
        T_eng, net = _creep_torque(plant, stage, v, decision.bsg_torque, creep)
        target = creep
    brake = 0.0
    if target is not None:
        brake = max(0.0, net - p.mass * (target**2 - v * v) / (2.0 * stage.step))
    result = transition((v, soc), (T_eng, decision.bsg_torque), stage.step, plant,
                        stage.grade, brake, dwell)
    return result, brake, T_eng


def _creep_torque(plant: Plant, stage: StageProblem, v: float, T_bsg: float, creep: float):
    p, maps = plant.vehicle, plant.maps
    lo, hi = (float(x[0]) for x in engine_torque_limits(np.array([v]), maps, p))
    cand = np.linspace(lo, hi, 401)
    net = wheel_force(cand, T_bsg, v, 0.0, maps, p) - road_load(v, stage.grade, p)
    ok = np.nonzero(v * v + 2.0 * stage.step * net / p.mass >= creep * creep)[0]
    i = int(ok[0]) if len(ok) else len(cand) - 1
    return float(cand[i]), float(net[i])


# --------------------------------------------------------------------------
# full-route solve


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Cost-to-go ``values[s, i, k]`` at position ``s``, velocity node ``i``, SoC node ``k``.

    ``policy[s, i, k]`` is the argmin action index into :func:`action_layout`
    (-1 where the node is infeasible).
    """

    grid: GridSpec
    weights: CostWeights
    stages: tuple
    values: np.ndarray
    policy: np.ndarray
    terminal_soc: float
    route_hash: str = ""
    plant_hash: str = ""
    signals_as_stops: bool = False

    @property
    def n_stages(self) -> int:
        return len(self.stages) - 1

    @property
    def positions(self) -> np.ndarray:
        return np.array([st.position for st in self.stages])

    def policy_torques(self):
        """Engine torque, BSG torque and brake target speed per node (NaN where infeasible)."""
        ie, ib, tj = action_layout(self.grid)
        a = self.policy
        ok = a >= 0
        safe = np.where(ok, a, 0)
        T_eng = np.where(ok, self.grid.eng_torques[ie[safe]], np.nan)
        T_bsg = np.where(ok, self.grid.bsg_torques[ib[safe]], np.nan)
        tgt = tj[safe]
        v_tgt = np.where(ok & (tgt >= 0), self.grid.velocity_nodes[np.maximum(tgt, 0)], np.nan)
        return T_eng, T_bsg, v_tgt


def terminal_values(grid: GridSpec, stage: StageProblem, soc_target: float) -> np.ndarray:
    """Zero inside a one-step SoC band around the target, +inf elsewhere."""
    soc = grid.soc_nodes
    V = np.full((len(grid.velocity_nodes), len(soc)), INF)
    band = np.abs(soc - soc_target) <= grid.soc_step + _TOL
    V[stage.node_lo:stage.node_hi + 1, band] = 0.0
    return V


def solve_full_route(route: RouteProfile, grid: Optional[GridSpec] = None,
                     weights: Optional[CostWeights] = None, plant: Optional[Plant] = None,
                     terminal_soc_target: float = 0.5, signals_as_stops: bool = False) -> ValueTable:
    """Backward recursion over all stages of ``route``."""
    grid = grid or GridSpec()
    weights = weights or CostWeights()
    plant = plant or default_plant()
    stages = build_stages(route, grid, weights, signals_as_stops)
    n = len(stages) - 1
    nv, nx = len(grid.velocity_nodes), len(grid.soc_nodes)
    values = np.empty((n + 1, nv, nx))
    policy = np.full((n, nv, nx), -1, dtype=np.int32)
    values[n] = terminal_values(grid, stages[n], terminal_soc_target)
    if not np.isfinite(values[n]).any():
        raise EmptyFeasibleSet(n, f"terminal SoC target {terminal_soc_target} has no grid node in band")
    for s in range(n - 1, -1, -1):
        values[s], policy[s] = backup_stage(plant, grid, weights, stages[s], stages[s + 1], values[s + 1])
        if not np.isfinite(values[s]).any():
            raise EmptyFeasibleSet(s)
    values.setflags(write=False)
    policy.setflags(write=False)
    return ValueTable(grid=grid, weights=weights, stages=stages, values=values, policy=policy,
                      terminal_soc=float(terminal_soc_target), route_hash=route.fingerprint(),
                      plant_hash=plant.fingerprint(), signals_as_stops=signals_as_stops)


def interpolate(V: np.ndarray, grid: GridSpec, v: float, soc: float) -> float:
    nodes, soc_nodes = grid.velocity_nodes, grid.soc_nodes
    for x, axis, name in ((v, nodes, "velocity"), (soc, soc_nodes, "SoC")):
        step = axis[1] - axis[0]
        if x < axis[0] - _TOL * step or x > axis[-1] + _TOL * step:
            raise GridBounds(f"{name} {x} outside grid [{axis[0]}, {axis[-1]}]")
    return float(_kernels.interp2(V, nodes[0], grid.velocity_step, soc_nodes[0], grid.soc_step,
                                  float(v), float(soc)))


def query_value(vt: ValueTable, s: int, v: float, soc: float) -> float:
    """Interpolated cost-to-go at position index ``s``."""
    if not 0 <= s <= vt.n_stages:
        raise GridBounds(f"stage {s} outside 0..{vt.n_stages}")
    return interpolate(vt.values[s], vt.grid, v, soc)


def check_plant(vt: ValueTable, plant: Plant):
    from .exceptions import ArtifactMismatch

    if vt.plant_hash and plant.fingerprint() != vt.plant_hash:
        raise ArtifactMismatch("plant does not match the one the value table was solved with")


def extract_trajectory(vt: ValueTable, x1, plant: Optional[Plant] = None, mode: str = "full-dp") -> RunRecord:
    """Forward pass of the one-step argmin against the stored values.

    At grid nodes this reproduces the stored policy; between nodes the argmin
    is re-evaluated at the actual state rather than interpolating controls.
    """
    plant = plant or default_plant()
    check_plant(vt, plant)
    return replay_policy(vt, x1, model=plant, plant=plant, mode=mode)


def replay_policy(vt: ValueTable, x1, model: Plant, plant: Plant, mode: str = "base-policy") -> RunRecord:
    """Drive ``plant`` with the greedy policy of ``vt`` computed on ``model``."""
    v, soc = float(x1[0]), float(x1[1])
    builder = TrajectoryBuilder(vt.stages[0].position, v, soc)
    grid, w = vt.grid, vt.weights
    for s in range(vt.n_stages):
        stage, nxt = vt.stages[s], vt.stages[s + 1]
        dec = greedy_step(model, grid, w, stage, nxt, vt.values[s + 1], v, soc)
        if dec is None:
            raise EmptyFeasibleSet(s, f"trajectory entered an infeasible region at stage {s}")
        res, brake, T_eng = advance(plant, stage, v, soc, dec, creep=grid.creep_speed)
        builder.append(nxt.position, res, T_eng, dec.bsg_torque, brake)
        v, soc = res.velocity, res.soc
    return builder.build(mode=mode)


class TrajectoryBuilder:
    def __init__(self, d0: float, v0: float, soc0: float, t0: float = 0.0):
        self.d, self.t, self.v, self.x = [d0], [t0], [v0], [soc0]
        self.te, self.tb, self.fb, self.fuel = [], [], [], [0.0]

    def append(self, d, res: StepResult, T_eng, T_bsg, brake):
        self.d.append(d)
        self.t.append(self.t[-1] + res.time)
        self.v.append(res.velocity)
        self.x.append(res.soc)
        self.fuel.append(self.fuel[-1] + res.fuel)
        self.te.append(T_eng)
        self.tb.append(T_bsg)
        self.fb.append(brake)

    def add_wait(self, seconds: float, plant: Plant):
        """Standstill at the current position: time passes, SoC drains by the bias load."""
        b = plant.battery
        self.t[-1] += seconds
        self.x[-1] -= seconds * b.bias_current / b.capacity_coulomb

    def build(self, **kw) -> RunRecord:
        pad = [np.nan]
        return RunRecord(distance=self.d, time=self.t, velocity=self.v, soc=self.x,
                         eng_torque=self.te + pad, bsg_torque=self.tb + pad,
                         brake_force=self.fb + pad, fuel=self.fuel, **kw)
