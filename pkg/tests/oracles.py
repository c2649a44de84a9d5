"""Reference computations that avoid the package's solver code paths.

Each oracle recomputes a quantity by a different route than the library.
Time-domain integration replaces the spatial update; literal enumeration of
control sequences replaces the backward recursion; a scalar per-action
recursion replaces the vectorized stage backup; the charge balance is
rebuilt from a run record rather than taken from the per-step SoC update.
"""
import itertools
import math

import numpy as np

from ecodrive.exceptions import InfeasibleTransition, PowerExceedsCapability
from ecodrive.powertrain import (
    battery_current,
    bsg_power,
    crank_torque,
    driveline_speeds,
    engine_torque_limits,
    fuel_rate,
    gear_select,
    road_load,
    transmission_output_torque,
    turbine_speed,
)


def euler_transition(plant, v0, soc0, T_eng, T_bsg, step, grade=0.0, dt=1e-3):
    """Integrate the longitudinal dynamics in time until ``step`` metres are covered.

    The gear stays at its entry value for the whole step, as in the
    spatial model. Returns ``(v, soc, t, fuel_kg)`` at the end of the step;
    the last sub-step is cut by linear interpolation at the crossing.
    """
    p, maps, b = plant.vehicle, plant.maps, plant.battery
    x, v, soc, t, fuel = 0.0, v0, soc0, 0.0, 0.0
    gear = gear_select(v0, maps)
    while True:
        T_out = transmission_output_torque(crank_torque(T_eng, T_bsg, p), turbine_speed(v, gear, maps, p),
                                           gear, maps, p)
        F = float(T_out) / p.wheel_radius - float(road_load(v, grade, p))
        w, _, _ = driveline_speeds(v, T_eng, maps, p, gear=gear)
        mdot = float(fuel_rate(gear, w, T_eng, maps))
        current = float(battery_current(soc, bsg_power(T_bsg, w, maps, p), b))
        v_new = v + F / p.mass * dt
        x_new = x + 0.5 * (v + v_new) * dt
        if x_new >= step:
            frac = (step - x) / (x_new - x)
            h = frac * dt
            return (v + frac * (v_new - v), soc - current * h / b.capacity_coulomb, t + h, fuel + mdot * h)
        x, v, t = x_new, v_new, t + dt
        soc -= current * dt / b.capacity_coulomb
        fuel += mdot * dt


def lattice_enumeration(V_terminal, costs, shifts_v, shifts_x, valid):
    """Minimum over every control sequence on a lattice where actions move by whole nodes.

    ``costs[s][i, a]`` is the cost of action ``a`` from velocity node ``i``
    at stage ``s``; ``shifts_v[a]``/``shifts_x[a]`` are node offsets.
    Returns the optimal cost from each ``(i, k)`` start node.
    """
    n_stages = len(costs)
    nv, nx = V_terminal.shape
    n_act = len(shifts_v)
    seqs = np.array(list(itertools.product(range(n_act), repeat=n_stages)))
    out = np.full((nv, nx), np.inf)
    for i0 in range(nv):
        for k0 in range(nx):
            i = np.full(len(seqs), i0)
            k = np.full(len(seqs), k0)
            total = np.zeros(len(seqs))
            alive = np.ones(len(seqs), dtype=bool)
            for s in range(n_stages):
                a = seqs[:, s]
                ok = valid[s][i, a]
                total = total + np.where(ok, costs[s][i, a], 0.0)
                i = i + shifts_v[a]
                k = k + shifts_x[a]
                alive &= ok & (i >= 0) & (i < nv) & (k >= 0) & (k < nx)
                i = np.clip(i, 0, nv - 1)
                k = np.clip(k, 0, nx - 1)
            total = total + V_terminal[i, k]
            total[~alive] = np.inf
            out[i0, k0] = total.min()
    return out


def _bilinear(V, v_nodes, x_nodes, v, x, snap=1e-9):
    """Conservative bilinear lookup: +inf outside the hull or if a weighted corner is +inf."""
    def locate(nodes, q):
        r = (q - nodes[0]) / (nodes[1] - nodes[0])
        if abs(r - round(r)) < snap:
            r = float(round(r))
        if r < 0 or r > len(nodes) - 1:
            return None
        j = min(int(math.floor(r)), len(nodes) - 2)
        return j, r - j

    a, b = locate(v_nodes, v), locate(x_nodes, x)
    if a is None or b is None:
        return math.inf
    (i, wv), (k, wx) = a, b
    acc = 0.0
    for di, w1 in ((0, 1 - wv), (1, wv)):
        for dk, w2 in ((0, 1 - wx), (1, wx)):
            if w1 * w2 <= 1e-12:
                continue
            val = V[i + di, k + dk]
            if math.isinf(val):
                return math.inf
            acc += w1 * w2 * val
    return acc


def scalar_bellman(plant, grid, gamma, mdot_norm, step, n_stages, grade, v_lo, v_hi, soc_target):
    """Cost-to-go on the nodes of every position by per-action scalar evaluation.

    Assumes a flat limit window ``[v_lo, v_hi]`` covering every velocity node,
    no stops and no braking actions.
    """
    v_nodes, x_nodes = grid.velocity_nodes, grid.soc_nodes
    E, B = grid.eng_torques, grid.bsg_torques
    soc_lo = max(grid.soc_bounds[0], plant.battery.soc_min)
    soc_hi = min(grid.soc_bounds[1], plant.battery.soc_max)
    a_min, a_max = grid.accel_bounds
    V = np.full((len(v_nodes), len(x_nodes)), math.inf)
    V[:, np.abs(x_nodes - soc_target) <= grid.soc_step + 1e-9] = 0.0
    tables = [V]
    from ecodrive.dp import transition

    for _ in range(n_stages):
        nxt = tables[0]
        cur = np.full_like(nxt, math.inf)
        for i, v in enumerate(v_nodes):
            t_lo, t_hi = (float(z[0]) for z in engine_torque_limits(np.array([v]), plant.maps, plant.vehicle))
            for k, x in enumerate(x_nodes):
                best = math.inf
                for Te in E:
                    if not t_lo - 1e-9 <= Te <= t_hi + 1e-9:
                        continue
                    for Tb in B:
                        try:
                            res = transition((v, x), (Te, Tb), step, plant, grade)
                        except (InfeasibleTransition, PowerExceedsCapability):
                            continue
                        accel = (res.velocity**2 - v * v) / (2 * step)
                        if not a_min - 1e-12 <= accel <= a_max + 1e-12:
                            continue
                        if not v_lo - 1e-9 <= res.velocity <= v_hi + 1e-9:
                            continue
                        if not soc_lo - 1e-9 <= res.soc <= soc_hi + 1e-9:
                            continue
                        tail = _bilinear(nxt, v_nodes, x_nodes, res.velocity, res.soc)
                        c = (gamma * res.fuel_rate / mdot_norm + 1 - gamma) * res.time
                        best = min(best, c + tail)
                cur[i, k] = best
        tables.insert(0, cur)
    return tables


def soc_bookkeeping_residual(rec, plant):
    """Relative mismatch between the SoC drop and the charge drawn, recomputed from the record."""
    b, maps, p = plant.battery, plant.maps, plant.vehicle
    charge = 0.0
    for k in range(len(rec.distance) - 1):
        v0, v1 = rec.velocity[k], rec.velocity[k + 1]
        step = rec.distance[k + 1] - rec.distance[k]
        t_move = 2.0 * step / (v0 + v1)
        dwell = (rec.time[k + 1] - rec.time[k]) - t_move
        w, _, _ = driveline_speeds(0.5 * (v0 + v1), rec.eng_torque[k], maps, p, gear=gear_select(v0, maps))
        current = float(battery_current(rec.soc[k], bsg_power(rec.bsg_torque[k], w, maps, p), b))
        charge += current * t_move + b.bias_current * dwell
    drop = (rec.soc[0] - rec.soc[-1]) * b.capacity_coulomb
    return abs(drop - charge) / max(abs(charge), 1e-12)
