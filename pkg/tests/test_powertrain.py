"""Plant model: hand-evaluated operating points and monotonicity properties."""
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecodrive._tables import Table
from ecodrive.dp import transition
from ecodrive.exceptions import PowerExceedsCapability
from ecodrive.powertrain import (
    PowertrainMaps,
    VehicleParams,
    battery_current,
    bsg_power,
    driveline_speeds,
    fuel_rate,
    gear_select,
    max_battery_power,
    road_load,
    wheel_force,
)


def _constant_eff(name, axis_names, value):
    axes = (np.array([0.0, 5000.0]), np.array([-500.0, 500.0]))
    return Table(name, axis_names, ("rad/s", "Nm"), axes, np.full((2, 2), value), "-")


@pytest.fixture
def flat_eff_maps(plant):
    return replace(plant.maps,
                   bsg_efficiency=_constant_eff("eta_bsg", ("omega_bsg", "T_bsg"), 0.8),
                   transmission_efficiency=_constant_eff("eta_tran", ("omega_turb", "T_turb"), 0.9))


# road load

def test_road_load_at_rest_is_rolling_resistance():
    p = VehicleParams(mass=1850.0, rolling_coeff0=0.009)
    assert road_load(0.0, 0.0, p) == pytest.approx(1850 * 9.81 * 0.009, rel=1e-12)
    assert road_load(0.0, 0.0, p) == pytest.approx(163.3365, abs=1e-4)


def test_road_load_vanishes_as_rolling_resistance_vanishes():
    p = VehicleParams(rolling_coeff0=1e-15, rolling_coeff1=0.0)
    assert road_load(0.0, 0.0, p) == pytest.approx(0.0, abs=1e-10)


def test_road_load_hand_evaluated_on_grade():
    # drag 153.12 N + rolling 1850*9.81*cos(0.02)*0.011 + weight*sin(0.02)
    assert road_load(20.0, 0.02, VehicleParams()) == pytest.approx(715.6593771148276, rel=1e-12)


@given(st.floats(0, 40), st.floats(0, 40), st.floats(0, 0.1))
def test_road_load_increases_with_speed_uphill(v1, v2, grade):
    lo, hi = sorted((v1, v2))
    p = VehicleParams()
    assert road_load(hi, grade, p) >= road_load(lo, grade, p)


# gear schedule

def test_gear_schedule_thresholds(plant):
    first = plant.maps.upshift_speeds[0]
    assert gear_select(0.0, plant.maps) == 1
    assert gear_select(np.nextafter(first, 0), plant.maps) == 1
    assert gear_select(np.nextafter(first, 99), plant.maps) == 2


def test_gear_sequence_nondecreasing_over_speed_sweep(plant):
    gears = gear_select(np.linspace(0, 40, 4001), plant.maps)
    assert np.all(np.diff(gears) >= 0)
    assert gears.min() == 1 and gears.max() == 6


# driveline speeds

def test_engine_off_when_stopped(plant):
    assert driveline_speeds(0.0, 0.0, plant.maps, plant.vehicle, stop=True)[0] == 0.0


def test_engine_idles_at_rest_without_stop_flag(plant):
    assert driveline_speeds(0.0, 0.0, plant.maps, plant.vehicle)[0] == plant.maps.omega_idle


def test_engine_follows_pump_speed_above_stall(plant):
    # gear 3 at 10 m/s: 3.6 * 1.56 * 10 / 0.33 turbine speed plus 5 rad/s slip
    w, _, gear = driveline_speeds(10.0, 50.0, plant.maps, plant.vehicle)
    assert gear == 3
    assert w == pytest.approx(175.1818181818182, rel=1e-12)


# fuel

def test_fuel_zero_with_engine_off(plant):
    assert fuel_rate(1, 0.0, 100.0, plant.maps) == 0.0


def test_fuel_cutoff_on_overrun(plant):
    assert fuel_rate(3, plant.maps.omega_idle + 50.0, -10.0, plant.maps) == 0.0


def test_fuel_at_table_node_is_stored_value(plant):
    tab = plant.maps.fuel
    g, w, T = tab.axes[0][1], tab.axes[1][12], tab.axes[2][14]
    assert fuel_rate(int(g), w, T, plant.maps) == tab.values[1, 12, 14]


@given(st.integers(1, 6), st.floats(0, 800), st.floats(-30, 260))
def test_fuel_nonnegative(plant, gear, w, T):
    assert fuel_rate(gear, w, T, plant.maps) >= 0.0


# BSG and battery

def test_bsg_power_zero_torque(plant):
    assert bsg_power(0.0, 200.0, plant.maps, plant.vehicle) == 0.0


def test_bsg_power_motoring_and_generating_branches(flat_eff_maps, plant):
    w_bsg = plant.vehicle.belt_ratio * 100.0
    assert bsg_power(10.0, 100.0, flat_eff_maps, plant.vehicle) == pytest.approx(10 * w_bsg / 0.8)
    assert bsg_power(-10.0, 100.0, flat_eff_maps, plant.vehicle) == pytest.approx(-10 * w_bsg * 0.8)


@given(st.floats(0.1, 25.0), st.floats(60.0, 600.0))
def test_motoring_costs_more_than_generating_returns(plant, T, w):
    p_motor = bsg_power(T, w, plant.maps, plant.vehicle)
    p_gen = bsg_power(-T, w, plant.maps, plant.vehicle)
    assert abs(p_motor) >= abs(p_gen)


def test_battery_current_is_bias_at_zero_power(plant):
    assert battery_current(0.5, 0.0, plant.battery) == pytest.approx(12.0, abs=1e-12)


def test_battery_current_at_zero_discriminant(plant):
    b = plant.battery
    voc = float(b.open_circuit_voltage(0.5))
    p_max = voc**2 / (4 * b.resistance)
    assert battery_current(0.5, p_max, b) == pytest.approx(voc / (2 * b.resistance) + b.bias_current, rel=1e-12)


def test_battery_current_rejects_unreachable_power(plant):
    with pytest.raises(PowerExceedsCapability):
        battery_current(0.5, float(max_battery_power(0.5, plant.battery)) * (1 + 1e-9), plant.battery)


@given(st.floats(0.3, 0.8), st.floats(-3e4, 2.5e4), st.floats(-3e4, 2.5e4))
def test_battery_current_increasing_in_power(plant, soc, p1, p2):
    lo, hi = sorted((p1, p2))
    b = plant.battery
    assert battery_current(soc, hi, b) >= battery_current(soc, lo, b)


# wheel force

def test_wheel_force_zero_torque(plant):
    assert wheel_force(0.0, 0.0, 10.0, 0.0, plant.maps, plant.vehicle) == 0.0


def test_wheel_force_efficiency_branches(flat_eff_maps, plant):
    # gear 3 at 10 m/s, ratio 3.6 * 1.56, wheel radius 0.33
    drive = wheel_force(100.0, 0.0, 10.0, 0.0, flat_eff_maps, plant.vehicle)
    overrun = wheel_force(-20.0, 0.0, 10.0, 0.0, flat_eff_maps, plant.vehicle)
    assert drive == pytest.approx(1531.6363636363637, rel=1e-12)
    assert overrun == pytest.approx(-378.1818181818182, rel=1e-12)


def test_wheel_force_continuous_at_zero_torque(plant):
    eps = 1e-6
    up = wheel_force(eps, 0.0, 10.0, 0.0, plant.maps, plant.vehicle)
    down = wheel_force(-eps, 0.0, 10.0, 0.0, plant.maps, plant.vehicle)
    assert abs(up - down) < 1e-4


def test_brake_force_subtracts_exactly(plant):
    a = wheel_force(80.0, 5.0, 12.0, 0.0, plant.maps, plant.vehicle)
    b = wheel_force(80.0, 5.0, 12.0, 100.0, plant.maps, plant.vehicle)
    assert a - b == pytest.approx(100.0, abs=1e-9)


def test_negative_brake_force_rejected(plant):
    with pytest.raises(ValueError):
        wheel_force(0.0, 0.0, 10.0, -1.0, plant.maps, plant.vehicle)


# SoC drain without BSG

def test_soc_drains_linearly_at_bias_current(plant):
    b = plant.battery
    v, soc, elapsed = 8.0, 0.5, 0.0
    for T_eng in (60.0, 40.0, 20.0, 0.0, 30.0):
        res = transition((v, soc), (T_eng, 0.0), 10.0, plant)
        v, soc, elapsed = res.velocity, res.soc, elapsed + res.time
    expected = 0.5 - b.bias_current * elapsed / (3600.0 * b.capacity_ah)
    assert soc == pytest.approx(expected, abs=1e-12)


@given(st.floats(5.0, 20.0), st.floats(0.35, 0.75), st.floats(-25.0, 25.0))
def test_soc_moves_against_battery_current(plant, v, soc, T_bsg):
    res = transition((v, soc), (100.0, T_bsg), 10.0, plant)
    assert np.sign(res.soc - soc) == -np.sign(res.current)


def test_maps_round_trip_through_csv(plant, tmp_path):
    plant.maps.to_csv_dir(tmp_path)
    loaded = PowertrainMaps.from_csv_dir(tmp_path)
    assert replace(plant, maps=loaded).fingerprint() == plant.fingerprint()
