"""Compiled inner loops for the stage backup."""
import math

import numpy as np
from numba import njit

INF = np.inf
SNAP = 1e-9
WEIGHT_EPS = 1e-12


@njit(cache=True)
def _axis(x, origin, step, n):
    r = (x - origin) / step
    ri = math.floor(r + 0.5)
    if abs(r - ri) < SNAP:
        r = ri
    if r < 0.0 or r > n - 1:
        return -1, 0.0
    i = int(math.floor(r))
    if i > n - 2:
        i = n - 2
    if i < 0:
        i = 0
    return i, r - i


@njit(cache=True)
def interp2(V, v0, dv, x0, dx, v, x):
    """Bilinear lookup; +inf outside the hull or when a weighted corner is +inf."""
    nv, nx = V.shape
    i, wv = _axis(v, v0, dv, nv)
    if i < 0:
        return INF
    k, wx = _axis(x, x0, dx, nx)
    if k < 0:
        return INF
    acc = 0.0
    for a in range(2):
        w1 = wv if a == 1 else 1.0 - wv
        if w1 <= WEIGHT_EPS:
            continue
        for b in range(2):
            w2 = wx if b == 1 else 1.0 - wx
            w = w1 * w2
            if w <= WEIGHT_EPS:
                continue
            val = V[i + a, k + b]
            if val == INF:
                return INF
            acc += w * val
    return acc


@njit(cache=True)
def backup(V_next, v0, dv, x0, dx, x_states, cost, v_next, t_stage, ibar, valid,
           row_lo, row_hi, succ_vmin, succ_vmax, dwell_drain, inv_capacity, soc_lo, soc_hi):
    """One Bellman backup over rows ``row_lo..row_hi`` of the action arrays.

    Returns the minimal cost-to-go and argmin action per (row, SoC state);
    ties go to the lowest action index.
    """
    n_rows, n_act = cost.shape
    n_x = x_states.shape[0]
    V = np.full((n_rows, n_x), INF)
    arg = np.full((n_rows, n_x), -1, dtype=np.int32)
    for i in range(row_lo, row_hi + 1):
        for k in range(n_x):
            xs = x_states[k]
            best = INF
            best_a = -1
            for a in range(n_act):
                if not valid[i, a]:
                    continue
                vn = v_next[i, a]
                if vn < succ_vmin - SNAP or vn > succ_vmax + SNAP:
                    continue
                xn = xs - t_stage[i, a] * ibar[i, a, k] * inv_capacity - dwell_drain
                if xn < soc_lo - SNAP or xn > soc_hi + SNAP:
                    continue
                tail = interp2(V_next, v0, dv, x0, dx, vn, xn)
                if tail == INF:
                    continue
                total = cost[i, a] + tail
                if total < best:
                    best = total
                    best_a = a
            V[i, k] = best
            arg[i, k] = best_a
    return V, arg
