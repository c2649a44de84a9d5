"""Closed-loop simulation, baseline driver and experiment harness."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .dp import (
    CostWeights,
    Decision,
    GridSpec,
    TrajectoryBuilder,
    ValueTable,
    advance,
    build_stages,
    extract_trajectory,
    replay_policy,
    snap_index,
    solve_full_route,
)
from .exceptions import ArtifactMismatch, DegenerateComparison, EmptyFeasibleSet, HorizonInfeasible, \
    InfeasibleTransition
from .mpc import (
    HorizonProblem,
    _travel_time as _travel_time_to,
    comfort_braking,
    cruise_speed_for_arrival,
    eco_and_offsets,
    los_constraints,
    ramp_constraints,
    shape_constraints,
    solve_horizon,
)
from .powertrain import (
    Plant,
    bsg_torque_limits,
    default_plant,
    engine_torque_limits,
    road_load,
    wheel_force,
)
from .records import RunRecord
from .route import GREEN, RED, RouteProfile, SpatScenario, green_windows, randomize_departure, signal_state

MODES = ("full-dp", "rollout", "rollout+ecoand", "rollout+los", "baseline-driver")


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of a batch of runs.

    ``min_glide_speed`` is the slowest approach speed the signal shaper may
    ask for; ``approach_accel`` is the ramp used when it raises the lower
    limit; ``signal_margin`` keeps the arrival clear of green-window edges.
    """

    gammas: tuple = (0.7,)
    horizons: tuple = (20,)
    mass_perturbation: float = 0.0
    n_seeds: int = 100
    first_seed: int = 0
    modes: tuple = ("rollout+ecoand", "rollout+los", "baseline-driver")
    los_range: float = 100.0
    min_glide_speed: float = 2.5
    approach_accel: float = 0.5
    signal_margin: float = 2.0
    initial_soc: float = 0.5
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("gammas", "horizons", "modes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown modes {bad}; valid: {MODES}")
        if any(not 0 < g < 1 for g in self.gammas):
            raise ValueError("every gamma must lie in (0, 1)")
        if any(h < 1 for h in self.horizons):
            raise ValueError("horizons must be >= 1")
        if not -0.5 < self.mass_perturbation < 1.0:
            raise ValueError("mass_perturbation must lie in (-0.5, 1)")
        if self.los_range <= 0 or self.min_glide_speed < 0 or self.approach_accel <= 0:
            raise ValueError("los_range and approach_accel must be > 0, min_glide_speed >= 0")

    @property
    def seeds(self) -> list:
        return list(range(self.first_seed, self.first_seed + self.n_seeds))

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


# --------------------------------------------------------------------------
# metrics


def cumulative_cost(record_or_totals, w) -> float:
    """``gamma * fuel / mdot_norm + (1 - gamma) * time`` for a run or a ``(fuel, time)`` pair."""
    if isinstance(record_or_totals, RunRecord):
        fuel, time = record_or_totals.total_fuel, record_or_totals.travel_time
    else:
        fuel, time = record_or_totals
    gamma, norm = (w.gamma, w.mdot_norm) if isinstance(w, CostWeights) else w
    if not (math.isfinite(fuel) and math.isfinite(time)):
        raise ValueError("totals must be finite")
    return gamma * fuel / norm + (1.0 - gamma) * time


def error_metric(J, J_orig, J_perturbed) -> float:
    """Distance of ``J`` from the perturbed optimum, relative to the unadapted policy."""
    den = J_orig - J_perturbed
    if den == 0:
        raise DegenerateComparison("J_orig equals J_perturbed")
    return abs((J - J_perturbed) / den)


# --------------------------------------------------------------------------
# closed loop


def _node_floor(grid: GridSpec, v: float) -> float:
    nodes = grid.velocity_nodes
    i = int(np.searchsorted(nodes, v + 1e-9, side="right")) - 1
    return float(nodes[max(i, 0)])


def _node_ceil(grid: GridSpec, v: float) -> float:
    nodes = grid.velocity_nodes
    i = int(np.searchsorted(nodes, v - 1e-9, side="left"))
    return float(nodes[min(i, len(nodes) - 1)])


class _Signals:
    """Signals keyed by the stage index they snap to."""

    def __init__(self, route: RouteProfile, positions: np.ndarray):
        self.items = sorted(((snap_index(positions, s.position), s) for s in route.signals),
                            key=lambda x: x[0])
        self.at = {i: s for i, s in self.items}

    def ahead(self, k: int):
        return [(i, s) for i, s in self.items if i > k]


def _eco_and_bounds(cfg, vt, k, H, v, t, sig_idx, sig, scenario, a_bounds):
    """Per-stage bounds and stop set from the signal-approach rule."""
    stages = vt.stages
    grid = vt.grid
    d = stages[k].position
    dist = stages[sig_idx].position - d
    last = min(sig_idx, k + H)
    v_max = min(st.v_max for st in stages[k + 1:sig_idx + 1])
    v_min = max(st.v_min for st in stages[k + 1:sig_idx + 1])
    windows = green_windows(sig, scenario, t, 2.0 * sig.cycle_time)
    directive = eco_and_offsets(windows, v, dist, (v_min, v_max), a_bounds,
                                min_speed=cfg.min_glide_speed, margin=cfg.signal_margin)
    if directive.treat_as_stop:
        return None, ({sig_idx} if sig_idx <= k + H else set()), directive
    if directive.v_off_min == 0 and directive.v_off_max == 0:
        return None, set(), directive
    steps = np.array([st.step for st in stages[k:last]])
    bounds = [None] * H
    lo_target, hi_target = directive.window(v_min, v_max)
    upper = lower = None
    if directive.v_off_max > 0:
        # glide down to the cruise speed that reaches the window opening
        t_early, t_late = directive.arrival_window
        v_c = cruise_speed_for_arrival(v, dist, t_early, cfg.approach_accel, hi_target) if v > hi_target \
            else hi_target
        cap = _node_floor(grid, v_c)
        if _travel_time_to(v, dist, cap, cfg.approach_accel) > t_late:
            cap = _node_ceil(grid, v_c)
        cap = max(cap, grid.creep_speed)
        upper = shape_constraints(v, cap, steps, cfg.approach_accel)
    if directive.v_off_min > 0:
        lower = ramp_constraints(v, lo_target, steps, cfg.approach_accel)
    for j in range(last - k):
        hi = _node_ceil(grid, upper[j]) if upper is not None else math.inf
        lo = _node_floor(grid, lower[j]) if lower is not None else 0.0
        bounds[j] = (min(lo, hi), hi)
    return tuple(bounds), set(), directive


def _los_stops(cfg, vt, k, H, t, signals, scenario):
    d = vt.stages[k].position
    stops = set()
    for i, sig in signals.ahead(k):
        if i > k + H:
            break
        phase, _ = signal_state(sig, scenario, t)
        if los_constraints(phase, vt.stages[i].position - d, cfg.los_range).treat_as_stop:
            stops.add(i)
    return stops


def _wait_for_green(sig, scenario, t) -> float:
    phase, _ = signal_state(sig, scenario, t)
    if phase == GREEN:
        return 0.0
    return float(green_windows(sig, scenario, t, 2.0 * sig.cycle_time)[0][0])


def closed_loop_run(cfg: ExperimentConfig, route: RouteProfile, scenario: Optional[SpatScenario],
                    plant: Plant, vt: ValueTable, mode: str = "rollout", horizon: int = 20,
                    model: Optional[Plant] = None) -> RunRecord:
    """Drive ``plant`` along ``route`` with the receding-horizon controller.

    ``model`` is the prediction model (defaults to ``plant``); the terminal
    cost always comes from ``vt``, which may have been solved for other
    parameters. Modes: ``rollout`` ignores signal timing, ``rollout+ecoand``
    shapes speed limits from SPaT, ``rollout+los`` sees only the phase of
    signals within line of sight.
    """
    if mode not in ("rollout", "rollout+ecoand", "rollout+los"):
        raise ValueError(f"closed_loop_run does not handle mode {mode!r}")
    if vt.route_hash and vt.route_hash != route.fingerprint():
        raise ArtifactMismatch("value table was solved for a different route")
    model = model or plant
    scenario = scenario or SpatScenario()
    stages, grid, w = vt.stages, vt.grid, vt.weights
    n = vt.n_stages
    a_bounds = grid.accel_bounds
    signals = _Signals(route, vt.positions)
    v, soc = grid.creep_speed, cfg.initial_soc
    builder = TrajectoryBuilder(stages[0].position, v, soc)
    t = 0.0
    violations = fallbacks = 0
    for k in range(n):
        H = min(horizon, n - k)
        bounds, stops = None, set()
        if mode == "rollout+ecoand":
            ahead = [(i, s) for i, s in signals.ahead(k)
                     if stages[i].position - stages[k].position <= s.dsrc_range]
            if ahead:
                bounds, stops, _ = _eco_and_bounds(cfg, vt, k, H, v, t, *ahead[0], scenario, a_bounds)
        elif mode == "rollout+los":
            stops = _los_stops(cfg, vt, k, H, t, signals, scenario)
        dec = _solve_with_fallback(vt, model, w, k, H, (v, soc), bounds, stops)
        if mode == "rollout+ecoand" and dec is not None and k + 1 in signals.at and k + 1 not in stops:
            # last stage before the stop line: stop unless the planned crossing is in green
            t_arr = t + 2.0 * stages[k].step / (v + dec.v_next)
            if signal_state(signals.at[k + 1], scenario, t_arr)[0] != GREEN:
                stops = stops | {k + 1}
                dec = _solve_with_fallback(vt, model, w, k, H, (v, soc), None, stops)
        if dec is None:
            fallbacks += 1
            dec = comfort_braking(model, vt, stages[k], v, soc)
        res, brake, T_eng = advance(plant, stages[k], v, soc, dec, creep=grid.creep_speed)
        builder.append(stages[k + 1].position, res, T_eng, dec.bsg_torque, brake)
        t += res.time
        v, soc = res.velocity, res.soc
        sig = None if vt.signals_as_stops else signals.at.get(k + 1)
        if sig is not None and k + 1 < n:
            phase, _ = signal_state(sig, scenario, t)
            if v <= grid.creep_speed + 1e-6 and mode != "rollout":
                wait = _wait_for_green(sig, scenario, t)
                if wait > 0:
                    builder.add_wait(wait, plant)
                    t += wait
                    soc = builder.x[-1]
            elif phase == RED:
                violations += 1
    rec = builder.build(mode=mode, seed=scenario.seed, red_violations=violations, fallbacks=fallbacks)
    rec.meta.update(horizon=horizon, gamma=w.gamma)
    return rec


def _solve_with_fallback(vt, model, w, k, H, state, bounds, stops) -> Optional[Decision]:
    """Full problem, then without the raised lower limits, then the one-step base policy."""
    attempts = [(H, bounds, stops)]
    if bounds is not None:
        relaxed = tuple(None if b is None else (0.0, b[1]) for b in bounds)
        attempts.append((H, relaxed, stops))
    if H > 1:
        attempts.append((1, None, {s for s in stops if s == k + 1}))
    for h, b, s in attempts:
        try:
            prob = HorizonProblem(k, h, state, vt, bounds=b, stops=frozenset(s))
            return solve_horizon(prob, model, w, predict=False).decision
        except HorizonInfeasible:
            continue
    return None


# --------------------------------------------------------------------------
# baseline driver


@dataclass(frozen=True)
class DriverParams:
    """Heuristic line-of-sight driver.

    ``aggressiveness`` in (0, 1] scales acceleration, comfort deceleration and
    the fraction of the speed limit held when cruising.
    """

    aggressiveness: float = 0.6
    los_range: float = 100.0
    soc_target: float = 0.5

    def __post_init__(self):
        if not 0 < self.aggressiveness <= 1:
            raise ValueError("aggressiveness must lie in (0, 1]")

    def accel(self, a_max):
        return self.aggressiveness * a_max

    def comfort_decel(self, a_min):
        return (0.3 + 0.7 * self.aggressiveness) * abs(a_min)

    def cruise_fraction(self):
        return 0.85 + 0.15 * self.aggressiveness


def _bsg_rule(F_des, a_cmd, a_drv, soc, soc_target, b_lo, b_hi):
    """Production-style split: regen when braking, assist on hard launches, charge when low."""
    if F_des < 0:
        return b_lo if soc < 0.6 else 0.0
    if a_cmd > 0.5 * a_drv and soc > soc_target - 0.05:
        return 0.5 * b_hi
    if soc < soc_target:
        return max(b_lo, -8.4)
    return 0.0


def _controls_for_force(plant: Plant, v, soc, F_des, a_cmd, a_drv, soc_target, grade):
    p, maps = plant.vehicle, plant.maps
    vv = np.array([v])
    t_lo, t_hi = (float(x[0]) for x in engine_torque_limits(vv, maps, p))
    b_lo, b_hi = (float(x[0]) for x in bsg_torque_limits(vv, maps, p))
    T_bsg = _bsg_rule(F_des, a_cmd, a_drv, soc, soc_target, b_lo, b_hi)
    cand = np.linspace(t_lo, t_hi, 241)
    F = wheel_force(cand, T_bsg, v, 0.0, maps, p) - road_load(v, grade, p)
    i = int(np.argmin(np.abs(F - F_des)))
    brake = max(0.0, float(F[i]) - F_des)
    return float(cand[i]), float(T_bsg), brake


def baseline_driver_run(cfg: ExperimentConfig, route: RouteProfile, scenario: Optional[SpatScenario],
                        plant: Plant, driver: Optional[DriverParams] = None,
                        grid: Optional[GridSpec] = None) -> RunRecord:
    """Rule-based driver: track the limit, brake for stops and for non-green signals in sight."""
    grid = grid or GridSpec()
    driver = driver or DriverParams(los_range=cfg.los_range)
    scenario = scenario or SpatScenario()
    weights = CostWeights()
    stages = build_stages(route, grid, weights)
    positions = np.array([st.position for st in stages])
    n = len(stages) - 1
    signals = _Signals(route, positions)
    stop_idx = {st.index for st in stages if st.stop}
    a_min, a_max = grid.accel_bounds
    a_drv, b_drv = driver.accel(a_max), driver.comfort_decel(a_min)
    creep = grid.creep_speed
    v, soc, t = creep, cfg.initial_soc, 0.0
    builder = TrajectoryBuilder(positions[0], v, soc)
    violations = 0
    p = plant.vehicle
    for k in range(n):
        st = stages[k]
        v_des = driver.cruise_fraction() * stages[k + 1].v_max
        v2_next = min(v_des**2, v * v + 2.0 * a_drv * st.step) if v < v_des \
            else max(v_des**2, v * v - 2.0 * b_drv * st.step)
        # nearest point that requires stopping
        for i in range(k + 1, n + 1):
            dist = positions[i] - positions[k]
            if dist > max(driver.los_range, v * v / (2.0 * b_drv) + st.step):
                break
            must_stop = i in stop_idx
            sig = signals.at.get(i)
            if sig is not None and dist <= driver.los_range:
                phase, _ = signal_state(sig, scenario, t)
                a_req = (v * v - creep**2) / (2.0 * dist)
                if phase == RED:
                    must_stop = a_req <= abs(a_min)
                elif phase != GREEN:
                    must_stop = a_req <= 0.75 * abs(a_min)
            if must_stop:
                a_req = max((v * v - creep**2) / (2.0 * dist), 0.0)
                if a_req >= 0.9 * b_drv or i == k + 1:
                    v2_next = min(v2_next, max(creep**2, v * v - 2.0 * a_req * st.step))
                break
        v2_next = max(v2_next, creep**2)
        a_cmd = (v2_next - v * v) / (2.0 * st.step)
        F_des = p.mass * a_cmd
        T_eng, T_bsg, brake = _controls_for_force(plant, v, soc, F_des, a_cmd, a_drv, driver.soc_target, st.grade)
        target = math.sqrt(v2_next) if brake > 0 else None
        dec = Decision(-1, math.nan, T_eng, T_bsg, target, math.sqrt(v2_next), soc)
        res, brake, T_eng = advance(plant, st, v, soc, dec, creep=creep)
        builder.append(positions[k + 1], res, T_eng, T_bsg, brake)
        t += res.time
        v, soc = res.velocity, res.soc
        sig = signals.at.get(k + 1)
        if sig is not None and k + 1 < n:
            phase, _ = signal_state(sig, scenario, t)
            if v <= creep + 1e-6:
                wait = _wait_for_green(sig, scenario, t)
                if wait > 0:
                    builder.add_wait(wait, plant)
                    t += wait
                    soc = builder.x[-1]
            elif phase == RED:
                violations += 1
    rec = builder.build(mode="baseline-driver", seed=scenario.seed, red_violations=violations)
    rec.meta.update(aggressiveness=driver.aggressiveness)
    return rec


def calibrate_driver(cfg: ExperimentConfig, route: RouteProfile, plant: Plant, target_time: float,
                     seeds: Sequence[int], grid: Optional[GridSpec] = None, tol: float = 0.01,
                     max_iter: int = 30) -> DriverParams:
    """Bisect aggressiveness until the mean travel time over ``seeds`` matches ``target_time``."""
    def mean_time(a):
        d = DriverParams(aggressiveness=a, los_range=cfg.los_range)
        return float(np.mean([baseline_driver_run(cfg, route, randomize_departure(route, s), plant, d,
                                                  grid).travel_time for s in seeds]))

    lo, hi = 0.05, 1.0
    if mean_time(hi) >= target_time:
        return DriverParams(aggressiveness=hi, los_range=cfg.los_range)
    if mean_time(lo) <= target_time:
        return DriverParams(aggressiveness=lo, los_range=cfg.los_range)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        tm = mean_time(mid)
        if abs(tm - target_time) <= tol * target_time:
            return DriverParams(aggressiveness=mid, los_range=cfg.los_range)
        if tm > target_time:
            lo = mid
        else:
            hi = mid
    return DriverParams(aggressiveness=0.5 * (lo + hi), los_range=cfg.los_range)


# --------------------------------------------------------------------------
# experiments


@dataclass
class MonteCarloResult:
    """Per-run rows plus per-mode summaries."""

    rows: list
    failures: list = field(default_factory=list)

    def samples(self, mode: str, key: str = "fuel_g") -> np.ndarray:
        rows = sorted((r for r in self.rows if r["mode"] == mode), key=lambda r: r["seed"])
        return np.array([r[key] for r in rows], dtype=float)

    def summary(self) -> dict:
        out = {}
        for mode in sorted({r["mode"] for r in self.rows}):
            fuel, time = self.samples(mode, "fuel_g"), self.samples(mode, "time_s")
            n = len(fuel)
            half = stats.t.ppf(0.975, n - 1) * fuel.std(ddof=1) / math.sqrt(n) if n > 1 else math.nan
            out[mode] = {
                "n": n,
                "fuel_mean_g": float(fuel.mean()), "fuel_std_g": float(fuel.std(ddof=1)) if n > 1 else 0.0,
                "fuel_ci95_g": [float(fuel.mean() - half), float(fuel.mean() + half)],
                "time_mean_s": float(time.mean()), "time_std_s": float(time.std(ddof=1)) if n > 1 else 0.0,
                "red_violations": int(self.samples(mode, "red_violations").sum()),
            }
        return out

    def kde(self, mode: str, key: str = "fuel_g", points: int = 200):
        """Gaussian kernel density with Scott's bandwidth on a padded grid."""
        x = self.samples(mode, key)
        kde = stats.gaussian_kde(x)
        span = x.max() - x.min() or 1.0
        grid = np.linspace(x.min() - 0.2 * span, x.max() + 0.2 * span, points)
        return grid, kde(grid)

    def paired_test(self, better: str, worse: str, key: str = "fuel_g"):
        """One-sided paired t-test that ``better`` has lower ``key`` than ``worse``."""
        a, b = self.samples(better, key), self.samples(worse, key)
        return stats.ttest_rel(a, b, alternative="less")


def _row(rec: RunRecord, mode, seed, gamma, horizon, w):
    return {
        "seed": seed, "mode": mode, "gamma": gamma, "horizon": horizon,
        "fuel_g": 1000.0 * rec.total_fuel, "time_s": rec.travel_time,
        "terminal_soc": rec.terminal_soc, "cost": cumulative_cost(rec, w),
        "red_violations": rec.red_violations, "fallbacks": rec.fallbacks,
    }


def _mc_job(cfg, route, plant, vt, seed, mode, horizon, driver):
    scenario = randomize_departure(route, seed)
    try:
        if mode == "baseline-driver":
            rec = baseline_driver_run(cfg, route, scenario, plant, driver, vt.grid)
        elif mode == "full-dp":
            rec = extract_trajectory(vt, (vt.grid.creep_speed, cfg.initial_soc), plant)
        else:
            rec = closed_loop_run(cfg, route, scenario, plant, vt, mode, horizon)
    except (HorizonInfeasible, EmptyFeasibleSet, InfeasibleTransition) as exc:
        return None, {"seed": seed, "mode": mode, "error": str(exc)}
    return _row(rec, mode, seed, vt.weights.gamma, horizon, vt.weights), None


def monte_carlo(cfg: ExperimentConfig, route: RouteProfile, plant: Plant, vt: ValueTable,
                driver: Optional[DriverParams] = None) -> MonteCarloResult:
    """Every mode of ``cfg`` on every seed (first horizon of ``cfg``); failures are recorded."""
    horizon = cfg.horizons[0]
    jobs = [(seed, mode) for mode in cfg.modes for seed in cfg.seeds]
    out = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_mc_job)(cfg, route, plant, vt, seed, mode, horizon, driver) for seed, mode in jobs)
    rows = [r for r, _ in out if r is not None]
    failures = [f for _, f in out if f is not None]
    rows.sort(key=lambda r: (r["mode"], r["seed"]))
    return MonteCarloResult(rows=rows, failures=failures)


def pareto_sweep(gammas: Sequence[float], route: RouteProfile, plant: Optional[Plant] = None,
                 grid: Optional[GridSpec] = None, initial_soc: float = 0.5,
                 signals_as_stops: bool = False) -> list:
    """Full-route optimum per gamma as rows sorted by gamma."""
    plant = plant or default_plant()
    grid = grid or GridSpec()
    rows = []
    for g in sorted(gammas):
        if not 0 < g < 1:
            raise ValueError("gamma must lie in (0, 1)")
        vt = solve_full_route(route, grid, CostWeights(g), plant, initial_soc, signals_as_stops)
        rec = extract_trajectory(vt, (grid.creep_speed, initial_soc), plant)
        rows.append({"gamma": g, "fuel_g": 1000.0 * rec.total_fuel, "time_s": rec.travel_time,
                     "terminal_soc": rec.terminal_soc, "cost": cumulative_cost(rec, vt.weights)})
    return rows


def perturbation_study(route: RouteProfile, plant: Plant, gammas: Sequence[float],
                       deltas: Sequence[float], horizons: Sequence[int],
                       grid: Optional[GridSpec] = None, initial_soc: float = 0.5,
                       signals_as_stops: bool = False) -> list:
    """Rollout against a value table solved for the wrong mass.

    For each (gamma, delta) three references are reported: ``J_original``,
    the original-mass optimum on the original vehicle; ``J_perturbed``, the
    optimum solved for the perturbed mass; ``J_base``, the original-mass
    policy replayed on the perturbed vehicle. Rollout uses the perturbed
    model with the original-mass values as terminal cost, and ``J_eps`` is
    measured between ``J_original`` and ``J_perturbed``.
    """
    grid = grid or GridSpec()
    cfg = ExperimentConfig(n_seeds=1, modes=("rollout",))
    x1 = (grid.creep_speed, initial_soc)
    rows = []
    for g in gammas:
        w = CostWeights(g)
        vt = solve_full_route(route, grid, w, plant, initial_soc, signals_as_stops)
        J_orig = cumulative_cost(extract_trajectory(vt, x1, plant), w)
        for delta in deltas:
            pert = plant.with_mass_scale(1.0 + delta)
            vt_p = solve_full_route(route, grid, w, pert, initial_soc, signals_as_stops)
            J_pert = cumulative_cost(extract_trajectory(vt_p, x1, pert), w)
            J_base = cumulative_cost(replay_policy(vt, x1, model=plant, plant=pert), w)
            for h in horizons:
                rec = closed_loop_run(cfg, route, None, pert, vt, "rollout", h)
                J = cumulative_cost(rec, w)
                try:
                    eps = error_metric(J, J_orig, J_pert)
                except DegenerateComparison:
                    eps = math.nan
                rows.append({"gamma": g, "delta": delta, "horizon": h, "J_rollout": J,
                             "J_original": J_orig, "J_base": J_base, "J_perturbed": J_pert,
                             "J_eps": eps, "terminal_soc": rec.terminal_soc})
    return rows
