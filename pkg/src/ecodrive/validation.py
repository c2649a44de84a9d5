"""Argument checks shared by the estimators and the command line."""
from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_array

from .dp import GridSpec, ValueTable
from .exceptions import ArtifactMismatch, GridBounds
from .route import RouteProfile, validate_route


def check_gamma(gamma) -> float:
    """Fuel/time weight strictly inside (0, 1)."""
    g = float(gamma)
    if not 0.0 < g < 1.0:
        raise ValueError(f"gamma must lie strictly inside (0, 1), got {gamma!r}")
    return g


def check_positive(name: str, value, integer: bool = False):
    if integer:
        if isinstance(value, bool) or int(value) != value or value < 1:
            raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
        return int(value)
    x = float(value)
    if not (x > 0 and math.isfinite(x)):
        raise ValueError(f"{name} must be a finite number > 0, got {value!r}")
    return x


def check_states(X, n_columns: int | tuple = (2, 3)) -> np.ndarray:
    """2-D float array of states; rows are ``(v, soc)`` or ``(stage, v, soc)``."""
    A = check_array(X, dtype=float, ensure_2d=True)
    allowed = (n_columns,) if isinstance(n_columns, int) else n_columns
    if A.shape[1] not in allowed:
        raise ValueError(f"expected {' or '.join(map(str, allowed))} columns, got {A.shape[1]}")
    return A


def check_state(grid: GridSpec, v: float, soc: float) -> tuple:
    """``(v, soc)`` inside the grid hull."""
    (v_lo, v_hi), (x_lo, x_hi) = (grid.velocity_nodes[[0, -1]], grid.soc_nodes[[0, -1]])
    tol_v, tol_x = 1e-9 * grid.velocity_step, 1e-9 * grid.soc_step
    if not v_lo - tol_v <= v <= v_hi + tol_v:
        raise GridBounds(f"velocity {v} outside grid [{v_lo}, {v_hi}]")
    if not x_lo - tol_x <= soc <= x_hi + tol_x:
        raise GridBounds(f"SoC {soc} outside grid [{x_lo}, {x_hi}]")
    return float(v), float(soc)


def check_stage_index(vt: ValueTable, s) -> int:
    if int(s) != s or not 0 <= s <= vt.n_stages:
        raise GridBounds(f"stage {s!r} outside 0..{vt.n_stages}")
    return int(s)


def check_route(route) -> RouteProfile:
    if not isinstance(route, RouteProfile):
        raise TypeError(f"expected a RouteProfile, got {type(route).__name__}")
    problems = validate_route(route)
    if problems:
        raise ValueError("; ".join(problems))
    return route


def check_value_table(vt: ValueTable, route: RouteProfile) -> ValueTable:
    """The table must have been solved for ``route``."""
    if vt.route_hash and vt.route_hash != route.fingerprint():
        raise ArtifactMismatch("value table was solved for a different route")
    return vt
