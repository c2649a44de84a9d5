"""Receding-horizon solve, signal approach shaping and line-of-sight rules."""
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from ecodrive.dp import greedy_step
from ecodrive.exceptions import GridBounds, HorizonInfeasible
from ecodrive.mpc import (
    HorizonProblem,
    comfort_braking,
    cruise_speed_for_arrival,
    eco_and_offsets,
    los_constraints,
    pass_in_green_feasible,
    shape_constraints,
    solve_horizon,
)
from ecodrive.route import GREEN, RED

A_BOUNDS = (-2.4, 2.4)


def _arrival_samples(v0, dist, v_bounds, a_bounds, n=300):
    """Arrival times of every ramp-then-cruise profile on a dense (accel, cruise speed) grid.

    A start outside the speed band returns to it at the full rate, as the
    limit must be respected as soon as possible.
    """
    outside = not v_bounds[0] <= v0 <= v_bounds[1]
    accels = (np.ones(n) if outside else np.linspace(1e-3, 1.0, n))[:, None]
    cruise = np.linspace(v_bounds[0], v_bounds[1], n)[None, :]
    a = np.where(cruise >= v0, accels * a_bounds[1], -accels * abs(a_bounds[0]))
    d_ramp = (cruise**2 - v0**2) / (2 * a)
    v_end = np.sqrt(np.maximum(v0**2 + 2 * a * dist, 0.0))
    short = dist <= d_ramp
    t = np.where(short, (v_end - v0) / a, (cruise - v0) / a + (dist - d_ramp) / cruise)
    return t[np.isfinite(t) & (t > 0)]


# horizon solve

def test_one_step_horizon_is_greedy_argmin(short_table, plant):
    vt = short_table
    state = (5.2, 0.51)
    sol = solve_horizon(HorizonProblem(3, 1, state, vt), plant)
    dec = greedy_step(plant, vt.grid, vt.weights, vt.stages[3], vt.stages[4], vt.values[4], *state)
    assert sol.decision == dec
    assert sol.cost_to_go == pytest.approx(dec.value)


def test_predicted_states_respect_bounds(short_table, plant):
    vt = short_table
    bounds = tuple((None if j < 3 else (2.0, 8.0)) for j in range(10))
    sol = solve_horizon(HorizonProblem(2, 10, (6.0, 0.5), vt, bounds=bounds), plant)
    assert len(sol.predicted_velocity) == 11
    assert np.all(sol.predicted_velocity[4:] <= 8.0 + 1e-9)
    assert np.all(sol.predicted_velocity[4:] >= 2.0 - 1e-9)
    assert np.all((sol.predicted_soc >= 0.4 - 1e-9) & (sol.predicted_soc <= 0.6 + 1e-9))


def test_horizon_with_unreachable_bounds_is_infeasible(short_table, plant):
    vt = short_table
    with pytest.raises(HorizonInfeasible) as err:
        solve_horizon(HorizonProblem(0, 2, (0.5, 0.5), vt, bounds=((14.0, 15.0), None)), plant)
    assert err.value.stage == 0


def test_horizon_state_outside_grid(short_table, plant):
    with pytest.raises(GridBounds):
        solve_horizon(HorizonProblem(0, 5, (25.0, 0.5), short_table), plant)


def test_horizon_must_fit_route(short_table):
    with pytest.raises(ValueError):
        HorizonProblem(short_table.n_stages - 2, 5, (5.0, 0.5), short_table)
    with pytest.raises(ValueError):
        HorizonProblem(0, 0, (5.0, 0.5), short_table)


def test_comfort_braking_stays_within_decel_limit(short_table, plant):
    stage = short_table.stages[5]
    dec = comfort_braking(plant, short_table, stage, 12.0, 0.5)
    assert (dec.v_next**2 - 144.0) / (2 * stage.step) >= -2.4 - 1e-9
    assert dec.v_next < 12.0


# braking envelope

def test_shape_constraints_first_bound():
    out = shape_constraints(20.0, 0.5, [10.0, 10.0], -2.4)
    assert out[0] == pytest.approx(math.sqrt(400 - 48), rel=1e-12)
    assert out[0] == pytest.approx(18.76, abs=5e-3)


def test_shape_constraints_already_below_target():
    np.testing.assert_array_equal(shape_constraints(5.0, 8.0, [10.0] * 4, -2.4), np.full(4, 8.0))


@given(st.floats(0.5, 21.0), st.floats(0.5, 21.0), st.lists(st.floats(1.0, 50.0), min_size=1, max_size=30))
def test_shape_constraints_monotone_and_reachable(v, target, steps):
    out = shape_constraints(v, target, steps, -2.4)
    prev = v
    for bound, dd in zip(out, steps):
        assert bound <= max(prev, target) + 1e-12
        assert bound >= target
        # braking at the comfort limit from the previous bound reaches this one
        assert prev**2 - 2 * 2.4 * dd <= bound**2 + 1e-9
        prev = bound


# pass-in-green check

def test_windows_covering_all_time_are_feasible():
    check = pass_in_green_feasible(8.0, 150.0, [(0.0, math.inf)], (0.5, 15.0), A_BOUNDS)
    assert check.feasible


@pytest.mark.parametrize("window, feasible", [((10.0, 20.0), True), ((0.0, 14.0), False),
                                              ((15.5, 40.0), False)])
def test_fixed_speed_arrival(window, feasible):
    check = pass_in_green_feasible(10.0, 150.0, [window], (10.0, 10.0), A_BOUNDS)
    assert check.feasible is feasible


@pytest.mark.parametrize("seed", range(40))
def test_pass_in_green_matches_profile_enumeration(seed):
    rng = np.random.default_rng(seed)
    v0 = rng.uniform(2.0, 15.0)
    dist = rng.uniform(30.0, 300.0)
    v_lo = rng.uniform(0.5, 4.0)
    v_hi = rng.uniform(10.0, 20.0)
    t_open = rng.uniform(0.0, 80.0)
    window = (t_open, t_open + rng.uniform(2.0, 30.0))
    samples = _arrival_samples(v0, dist, (v_lo, v_hi), A_BOUNDS)
    check = pass_in_green_feasible(v0, dist, [window], (v_lo, v_hi), A_BOUNDS)
    assert check.earliest == pytest.approx(samples.min(), rel=2e-3)
    assert check.latest == pytest.approx(samples.max(), rel=2e-3)
    hit = np.any((samples >= window[0]) & (samples <= window[1]))
    clear = min(abs(window[0] - samples.max()), abs(window[1] - samples.min())) > 0.01 * samples.max()
    if clear:
        assert check.feasible == hit


def test_pass_in_green_needs_positive_distance():
    with pytest.raises(ValueError):
        pass_in_green_feasible(5.0, 0.0, [(0.0, 10.0)], (0.5, 15.0), A_BOUNDS)


# Eco-AND offsets

def test_already_passing_in_green_needs_no_offsets():
    d = eco_and_offsets([(0.0, 30.0)], 10.0, 100.0, (0.5, 15.0), A_BOUNDS)
    assert d.feasible and not d.treat_as_stop
    assert d.v_off_min == 0.0 and d.v_off_max == 0.0


def test_slowing_for_next_green_lowers_upper_limit():
    v_max = 15.0
    d = eco_and_offsets([(0.0, 3.0), (20.0, 60.0)], 10.0, 150.0, (0.5, v_max), A_BOUNDS)
    assert d.feasible and d.v_off_max > 0
    assert 150.0 / (v_max - d.v_off_max) >= 20.0
    assert d.arrival_window[0] >= 20.0


def test_unreachable_green_treated_as_stop():
    d = eco_and_offsets([(0.0, 1.0), (90.0, 95.0)], 10.0, 100.0, (8.0, 12.0), A_BOUNDS)
    assert d.treat_as_stop and not d.feasible


def test_late_arrival_raises_lower_limit():
    d = eco_and_offsets([(0.0, 12.0)], 5.0, 100.0, (0.5, 15.0), A_BOUNDS)
    assert d.v_off_min > 0
    assert 100.0 / (0.5 + d.v_off_min) <= 12.0


@given(st.floats(1.0, 20.0), st.floats(20.0, 400.0), st.floats(0.0, 80.0), st.floats(3.0, 50.0),
       st.floats(0.5, 5.0), st.floats(8.0, 21.0))
def test_offsets_shrink_route_window(v, dist, t_open, width, v_min, v_max):
    d = eco_and_offsets([(t_open, t_open + width)], v, dist, (v_min, v_max), A_BOUNDS, min_speed=2.5)
    lo, hi = d.window(v_min, v_max)
    assert d.v_off_min >= 0 and d.v_off_max >= 0
    assert v_min - 1e-12 <= lo <= hi + 1e-12 and hi <= v_max + 1e-12


@given(st.floats(1.0, 20.0), st.floats(20.0, 400.0), st.floats(1.0, 200.0))
def test_cruise_speed_hits_requested_arrival(v, dist, t):
    from ecodrive.mpc import _travel_time

    vc = cruise_speed_for_arrival(v, dist, t, 0.5, 21.0)
    arrival = _travel_time(v, dist, vc, 0.5)
    assume(1e-3 < vc < 21.0)
    assert arrival == pytest.approx(t, rel=1e-6)


# line of sight

def test_signal_beyond_sight_is_a_stop():
    assert los_constraints(GREEN, 150.0, 100.0).treat_as_stop


def test_green_in_sight_needs_no_offsets():
    d = los_constraints(GREEN, 50.0, 100.0)
    assert not d.treat_as_stop and d.v_off_max == 0.0 and d.v_off_min == 0.0


def test_red_in_sight_is_a_stop():
    assert los_constraints(RED, 50.0, 100.0).treat_as_stop
