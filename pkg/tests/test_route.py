"""Route description, signal timing and departure randomization."""
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ecodrive.exceptions import RouteBounds, RouteValidationError
from ecodrive.route import (
    GREEN,
    RED,
    YELLOW,
    RouteProfile,
    SpatScenario,
    TrafficSignal,
    Waypoint,
    flat_route,
    green_windows,
    limits_at,
    randomize_departure,
    signal_state,
    synthetic_urban_route,
    validate_route,
)

SIG = TrafficSignal(position=100.0, cycle_time=90.0, green=45.0, yellow=5.0, red=40.0)


def _two_segment():
    return RouteProfile(waypoints=(Waypoint(0.0, 0.5, 10.0, 0.01), Waypoint(200.0, 1.0, 15.0, -0.02)),
                        length=500.0)


def test_limits_at_start():
    assert limits_at(_two_segment(), 0.0) == (0.5, 10.0, 0.01)


def test_limits_at_boundary_takes_new_segment():
    assert limits_at(_two_segment(), 200.0) == (1.0, 15.0, -0.02)


def test_limits_beyond_route_end():
    with pytest.raises(RouteBounds):
        limits_at(_two_segment(), 501.0)


@given(st.floats(0.0, 500.0))
def test_limits_piecewise_constant_and_total(d):
    expected = (0.5, 10.0, 0.01) if d < 200.0 else (1.0, 15.0, -0.02)
    assert limits_at(_two_segment(), d) == expected


def test_signal_state_at_cycle_origin():
    assert signal_state(SIG, SpatScenario(), 0.0) == (GREEN, 45.0)


def test_signal_state_periodic_at_cycle():
    assert signal_state(SIG, SpatScenario(), 90.0) == signal_state(SIG, SpatScenario(), 0.0)


def test_signal_state_after_yellow():
    phase, remaining = signal_state(SIG, SpatScenario(), 50.0)
    assert phase == RED and remaining == pytest.approx(40.0)


def test_signal_state_in_yellow():
    assert signal_state(SIG, SpatScenario(), 47.0) == (YELLOW, pytest.approx(3.0))


@given(st.floats(0, 1e4), st.floats(0, 89.999), st.integers(1, 20))
def test_signal_state_periodic(t, offset, k):
    sc = SpatScenario(departure_offset=offset)
    a, b = signal_state(SIG, sc, t), signal_state(SIG, sc, t + k * 90.0)
    assert a[0] == b[0]
    assert a[1] == pytest.approx(b[1], abs=1e-6)
    assert a[1] > 0


def test_green_windows_relative_to_now():
    assert green_windows(SIG, SpatScenario(), 50.0, 200.0) == [(40.0, 85.0), (130.0, 175.0)]
    assert green_windows(SIG, SpatScenario(), 10.0, 100.0)[0] == (0.0, 35.0)


def test_departure_is_deterministic():
    route = synthetic_urban_route()
    assert randomize_departure(route, 7) == randomize_departure(route, 7)
    assert randomize_departure(route, 7) != randomize_departure(route, 8)


@given(st.integers(0, 10**6), st.floats(0, 500))
def test_departure_shifts_all_signals_together(seed, t):
    route = synthetic_urban_route()
    sc = randomize_departure(route, seed)
    base = SpatScenario()
    for sig in route.signals[:5]:
        shifted = signal_state(sig, sc, t)
        ref = signal_state(sig, base, t + sc.departure_offset)
        assert shifted[1] == pytest.approx(ref[1], abs=1e-9)
        if min(shifted[1], ref[1]) > 1e-9:
            assert shifted[0] == ref[0]


def test_departure_offsets_uniform_over_cycle():
    route = synthetic_urban_route()
    offsets = np.array([randomize_departure(route, s).departure_offset for s in range(10_000)])
    assert offsets.min() >= 0.0 and offsets.max() < 90.0
    assert stats.kstest(offsets, stats.uniform(0.0, 90.0).cdf).pvalue > 0.01


def test_valid_route_has_no_violations():
    assert validate_route(synthetic_urban_route()) == []


def test_signal_beyond_route_end_reported():
    route = flat_route(500.0, signals=(TrafficSignal(position=600.0),))
    problems = validate_route(route)
    assert len(problems) == 1 and "signals[0]" in problems[0]


def test_decreasing_waypoints_name_index():
    route = RouteProfile(waypoints=(Waypoint(0.0, 0.5, 10.0), Waypoint(300.0, 0.5, 10.0),
                                    Waypoint(200.0, 0.5, 10.0)), length=500.0)
    problems = validate_route(route)
    assert any("waypoints[2]" in p for p in problems)


def test_synthetic_urban_topology():
    route = synthetic_urban_route()
    assert route.length == 7400.0
    assert len(route.signals) == 22 and len(route.stop_signs) == 3
    assert all(s.cycle_time == 90.0 for s in route.signals)


def test_route_file_round_trip(tmp_path):
    route = synthetic_urban_route()
    route.save(tmp_path / "r.json")
    loaded = RouteProfile.load(tmp_path / "r.json")
    assert loaded.fingerprint() == route.fingerprint()


def test_route_file_names_bad_field(tmp_path):
    doc = flat_route(500.0).to_dict()
    del doc["waypoints"][0]["v_max_mps"]
    (tmp_path / "r.json").write_text(json.dumps(doc))
    with pytest.raises(RouteValidationError, match="v_max_mps"):
        RouteProfile.load(tmp_path / "r.json")


def test_route_file_requires_schema_version(tmp_path):
    doc = flat_route(500.0).to_dict()
    del doc["schema_version"]
    with pytest.raises(RouteValidationError, match="schema_version"):
        RouteProfile.from_dict(doc)
