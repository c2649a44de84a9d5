"""Quasi-static forward model of a P0 48V mild-hybrid driveline.

All functions broadcast over numpy arrays and are pure. Engine, belted
starter-generator (BSG), torque-converter and gearbox behaviour come from
gridded :class:`~ecodrive._tables.Table` maps; :func:`synthetic_maps` builds
analytic surrogates and :meth:`PowertrainMaps.from_csv_dir` loads real ones.

Sign conventions: battery current is positive on discharge, BSG torque is
positive when motoring, brake force is a nonnegative magnitude.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._tables import Table, as_tuple
from .exceptions import PowerExceedsCapability

N_GEARS = 6


@dataclass(frozen=True)
class VehicleParams:
    """Chassis and driveline constants (SI units)."""

    mass: float = 1850.0
    wheel_radius: float = 0.33
    drag_coeff: float = 0.29
    frontal_area: float = 2.2
    air_density: float = 1.2
    rolling_coeff0: float = 0.009
    rolling_coeff1: float = 1.0e-4  # s/m
    gravity: float = 9.81
    final_drive_ratio: float = 3.6
    belt_ratio: float = 2.7

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name == "rolling_coeff1":
                if value < 0:
                    raise ValueError("rolling_coeff1 must be >= 0")
            elif not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.mass < 500:
            raise ValueError(f"mass must be >= 500 kg, got {self.mass}")


@dataclass(frozen=True)
class BatteryParams:
    """Zero-th order equivalent circuit of the 48V pack."""

    voc_curve: Table
    resistance: float = 0.02  # ohm
    capacity_ah: float = 8.0
    bias_current: float = 12.0  # A, auxiliary loads
    soc_min: float = 0.3
    soc_max: float = 0.8

    def __post_init__(self):
        v = self.voc_curve.values
        if np.any(v <= 0) or np.any(np.diff(v) < 0):
            raise ValueError("open-circuit voltage must be positive and nondecreasing in SoC")
        if self.resistance <= 0 or self.capacity_ah <= 0:
            raise ValueError("resistance and capacity must be > 0")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ValueError("need 0 <= soc_min < soc_max <= 1")

    @property
    def capacity_coulomb(self) -> float:
        return 3600.0 * self.capacity_ah

    def open_circuit_voltage(self, soc):
        return self.voc_curve(soc)


@dataclass(frozen=True)
class PowertrainMaps:
    """Static maps of engine, BSG, torque converter and gearbox."""

    fuel: Table  # (gear, omega_eng, T_eng) -> kg/s
    slip: Table  # (gear, omega_eng, T_eng) -> rad/s
    bsg_efficiency: Table  # (omega_bsg, T_bsg) -> (0, 1]
    transmission_efficiency: Table  # (omega_turb, T_turb) -> (0, 1]
    engine_torque_min: Table  # (omega_eng,) -> Nm
    engine_torque_max: Table
    bsg_torque_min: Table  # (omega_eng,) -> Nm
    bsg_torque_max: Table
    gear_ratios: tuple = (4.46, 2.51, 1.56, 1.14, 0.85, 0.67)
    upshift_speeds: tuple = (4.0, 7.5, 11.0, 14.5, 18.0)  # m/s, gear n -> n+1
    omega_idle: float = 80.0
    omega_stall: float = 55.0

    def __post_init__(self):
        object.__setattr__(self, "gear_ratios", as_tuple(self.gear_ratios))
        object.__setattr__(self, "upshift_speeds", as_tuple(self.upshift_speeds))
        if len(self.gear_ratios) != N_GEARS or len(self.upshift_speeds) != N_GEARS - 1:
            raise ValueError("expected 6 gear ratios and 5 upshift speeds")
        if np.any(np.diff(self.gear_ratios) >= 0):
            raise ValueError("gear ratios must strictly decrease with gear number")
        if np.any(np.diff(self.upshift_speeds) <= 0) or self.upshift_speeds[0] <= 0:
            raise ValueError("shift speeds must be positive and strictly increasing")
        for t in (self.bsg_efficiency, self.transmission_efficiency):
            if np.any(t.values <= 0) or np.any(t.values > 1):
                raise ValueError(f"{t.name}: efficiencies must lie in (0, 1]")
        if np.any(self.fuel.values < 0):
            raise ValueError("fuel map must be nonnegative")
        if not 0 < self.omega_stall <= self.omega_idle:
            raise ValueError("need 0 < omega_stall <= omega_idle")

    def tables(self) -> dict:
        return {
            "fuel_map": self.fuel,
            "slip_map": self.slip,
            "bsg_efficiency": self.bsg_efficiency,
            "transmission_efficiency": self.transmission_efficiency,
            "engine_torque_min": self.engine_torque_min,
            "engine_torque_max": self.engine_torque_max,
            "bsg_torque_min": self.bsg_torque_min,
            "bsg_torque_max": self.bsg_torque_max,
        }

    def to_csv_dir(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for fname, table in self.tables().items():
            table.to_csv(path / f"{fname}.csv")
        scalars = {
            "gear_ratios": list(self.gear_ratios),
            "upshift_speeds_mps": list(self.upshift_speeds),
            "omega_idle_radps": self.omega_idle,
            "omega_stall_radps": self.omega_stall,
        }
        (path / "driveline.json").write_text(json.dumps(scalars, indent=2) + "\n")

    @classmethod
    def from_csv_dir(cls, path):
        path = Path(path)
        t = {name: Table.from_csv(path / f"{name}.csv") for name in (
            "fuel_map", "slip_map", "bsg_efficiency", "transmission_efficiency",
            "engine_torque_min", "engine_torque_max", "bsg_torque_min", "bsg_torque_max")}
        scalars = json.loads((path / "driveline.json").read_text())
        return cls(
            fuel=t["fuel_map"], slip=t["slip_map"],
            bsg_efficiency=t["bsg_efficiency"],
            transmission_efficiency=t["transmission_efficiency"],
            engine_torque_min=t["engine_torque_min"], engine_torque_max=t["engine_torque_max"],
            bsg_torque_min=t["bsg_torque_min"], bsg_torque_max=t["bsg_torque_max"],
            gear_ratios=scalars["gear_ratios"],
            upshift_speeds=scalars["upshift_speeds_mps"],
            omega_idle=scalars["omega_idle_radps"],
            omega_stall=scalars["omega_stall_radps"],
        )


@dataclass(frozen=True)
class Plant:
    """Vehicle, maps and battery bundled as one immutable model."""

    vehicle: VehicleParams = field(default_factory=VehicleParams)
    maps: PowertrainMaps = field(default_factory=lambda: synthetic_maps())
    battery: BatteryParams = field(default_factory=lambda: default_battery())

    def with_mass_scale(self, factor: float) -> "Plant":
        """Copy with the vehicle mass multiplied by ``factor``."""
        return replace(self, vehicle=replace(self.vehicle, mass=self.vehicle.mass * factor))

    def fingerprint(self) -> str:
        cached = self.__dict__.get("_fingerprint")
        if cached is None:
            cached = self._compute_fingerprint()
            object.__setattr__(self, "_fingerprint", cached)
        return cached

    def _compute_fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(asdict(self.vehicle), sort_keys=True).encode())
        b = self.battery
        h.update(json.dumps([b.resistance, b.capacity_ah, b.bias_current, b.soc_min, b.soc_max]).encode())
        tables = dict(self.maps.tables(), voc_curve=b.voc_curve)
        for name in sorted(tables):
            tab = tables[name]
            h.update(name.encode())
            for a in tab.axes:
                h.update(np.ascontiguousarray(a).tobytes())
            h.update(np.ascontiguousarray(tab.values).tobytes())
        m = self.maps
        h.update(json.dumps([m.gear_ratios, m.upshift_speeds, m.omega_idle, m.omega_stall]).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class PlantOutput:
    fuel_rate: float
    battery_current: float
    wheel_force: float
    engine_speed: float
    gear: int
    brake_force: float

    def __post_init__(self):
        if self.brake_force < 0:
            raise ValueError("brake_force must be >= 0")
        if not 1 <= self.gear <= N_GEARS:
            raise ValueError("gear must be in 1..6")
        if self.fuel_rate < 0:
            raise ValueError("fuel_rate must be >= 0")


# --------------------------------------------------------------------------
# model equations


def road_load(v, grade, p: VehicleParams):
    """Aerodynamic drag + rolling resistance + grade force [N]."""
    v = np.asarray(v, dtype=float)
    grade = np.asarray(grade, dtype=float)
    rolling = p.rolling_coeff0 + p.rolling_coeff1 * v
    weight = p.mass * p.gravity
    return (0.5 * p.drag_coeff * p.air_density * p.frontal_area * v**2
            + weight * np.cos(grade) * rolling
            + weight * np.sin(grade))


def gear_select(v, maps: PowertrainMaps):
    """Gear number (1..6) from the static upshift speed schedule."""
    return np.searchsorted(np.asarray(maps.upshift_speeds), np.asarray(v, dtype=float), side="right") + 1


def gear_ratio(gear, maps: PowertrainMaps):
    return np.asarray(maps.gear_ratios)[np.asarray(gear) - 1]


def turbine_speed(v, gear, maps: PowertrainMaps, p: VehicleParams):
    return p.final_drive_ratio * gear_ratio(gear, maps) * np.asarray(v, dtype=float) / p.wheel_radius


def driveline_speeds(v, T_eng, maps: PowertrainMaps, p: VehicleParams, stop=False, gear=None):
    """Engine speed, turbine speed and gear for a vehicle speed.

    The converter pump runs at turbine speed plus the desired slip; below the
    stall speed the engine idles, or is off when ``stop`` is set. ``gear``
    overrides the shift schedule.
    """
    v = np.asarray(v, dtype=float)
    gear = gear_select(v, maps) if gear is None else np.asarray(gear)
    omega_turb = turbine_speed(v, gear, maps, p)
    # slip is looked up against turbine speed: engine speed is what we are solving for
    omega_pump = omega_turb + maps.slip(gear, omega_turb, T_eng)
    fallback = np.where(np.asarray(stop, dtype=bool), 0.0, maps.omega_idle)
    omega_eng = np.where(omega_pump >= maps.omega_stall, omega_pump, fallback)
    return omega_eng, omega_turb, gear


def engine_speed(v, maps: PowertrainMaps, p: VehicleParams, stop=False):
    return driveline_speeds(v, 0.0, maps, p, stop)[0]


def fuel_rate_with_flags(gear, omega_eng, T_eng, maps: PowertrainMaps):
    """Fuel flow [kg/s] plus a mask of queries clamped to the table edge."""
    omega_eng = np.asarray(omega_eng, dtype=float)
    T_eng = np.asarray(T_eng, dtype=float)
    raw, clamped = maps.fuel.evaluate(gear, omega_eng, T_eng)
    cutoff = (T_eng <= 0) & (omega_eng > maps.omega_idle)
    rate = np.where((omega_eng <= 0) | cutoff, 0.0, raw)
    return np.maximum(rate, 0.0), clamped & (omega_eng > 0) & ~cutoff


def fuel_rate(gear, omega_eng, T_eng, maps: PowertrainMaps):
    return fuel_rate_with_flags(gear, omega_eng, T_eng, maps)[0]


def bsg_power(T_bsg, omega_eng, maps: PowertrainMaps, p: VehicleParams):
    """Electrical power drawn by the BSG [W] (negative when generating)."""
    T_bsg = np.asarray(T_bsg, dtype=float)
    omega_bsg = p.belt_ratio * np.asarray(omega_eng, dtype=float)
    eta = maps.bsg_efficiency(omega_bsg, T_bsg)
    mech = T_bsg * omega_bsg
    return np.where(T_bsg > 0, mech / eta, mech * eta)


def max_battery_power(soc, b: BatteryParams):
    voc = b.open_circuit_voltage(soc)
    return voc**2 / (4.0 * b.resistance)


def battery_current(soc, P_bsg, b: BatteryParams):
    """Terminal current including the auxiliary bias [A].

    Raises PowerExceedsCapability when ``P_bsg > V_oc**2 / (4 R0)``.
    """
    P = np.asarray(P_bsg, dtype=float)
    voc = b.open_circuit_voltage(soc)
    p_max = voc**2 / (4.0 * b.resistance)
    if np.any(P > p_max):
        raise PowerExceedsCapability(
            f"BSG power {np.max(P):.1f} W exceeds battery capability {np.min(p_max):.1f} W")
    root = np.sqrt(np.maximum(voc**2 - 4.0 * b.resistance * P, 0.0))
    # 2P/(Voc + root) == (Voc - root)/(2 R0) without the cancellation at small P
    current = 2.0 * P / (voc + root)
    return current + b.bias_current


def soc_rate(soc, P_bsg, b: BatteryParams):
    return -battery_current(soc, P_bsg, b) / b.capacity_coulomb


def transmission_output_torque(T_turb, omega_turb, gear, maps: PowertrainMaps, p: VehicleParams):
    T_turb = np.asarray(T_turb, dtype=float)
    eta = maps.transmission_efficiency(omega_turb, T_turb)
    eta_bar = np.where(T_turb >= 0, eta, 1.0 / eta)
    return p.final_drive_ratio * gear_ratio(gear, maps) * T_turb * eta_bar


def crank_torque(T_eng, T_bsg, p: VehicleParams):
    """Powertrain torque at the crank; BSG torque is referred through the belt."""
    return np.asarray(T_eng, dtype=float) + p.belt_ratio * np.asarray(T_bsg, dtype=float)


def wheel_force(T_eng, T_bsg, v, F_brk, maps: PowertrainMaps, p: VehicleParams):
    """Net tractive force at the wheels [N] after the friction brake."""
    F_brk = np.asarray(F_brk, dtype=float)
    if np.any(F_brk < 0):
        raise ValueError("brake force must be >= 0")
    gear = gear_select(v, maps)
    omega_turb = turbine_speed(v, gear, maps, p)
    T_out = transmission_output_torque(crank_torque(T_eng, T_bsg, p), omega_turb, gear, maps, p)
    return T_out / p.wheel_radius - F_brk


def engine_torque_limits(v, maps: PowertrainMaps, p: VehicleParams):
    w = engine_speed(v, maps, p)
    return maps.engine_torque_min(w), maps.engine_torque_max(w)


def bsg_torque_limits(v, maps: PowertrainMaps, p: VehicleParams):
    w = engine_speed(v, maps, p)
    return maps.bsg_torque_min(w), maps.bsg_torque_max(w)


def evaluate(v, soc, T_eng, T_bsg, F_brk, plant: Plant, stop=False) -> PlantOutput:
    """Evaluate the full plant at one operating point."""
    omega_eng, _, gear = driveline_speeds(v, T_eng, plant.maps, plant.vehicle, stop)
    m_dot = fuel_rate(gear, omega_eng, T_eng, plant.maps)
    P = bsg_power(T_bsg, omega_eng, plant.maps, plant.vehicle)
    current = battery_current(soc, P, plant.battery)
    F = wheel_force(T_eng, T_bsg, v, F_brk, plant.maps, plant.vehicle)
    return PlantOutput(
        fuel_rate=float(m_dot), battery_current=float(current), wheel_force=float(F),
        engine_speed=float(omega_eng), gear=int(gear), brake_force=float(F_brk))


def cruise_fuel_rate(plant: Plant, v: float = 13.0, grade: float = 0.0) -> float:
    """Fuel rate holding speed ``v`` on the engine alone (BSG idle)."""
    p, maps = plant.vehicle, plant.maps
    F_needed = float(road_load(v, grade, p))
    # fixed point on the efficiency branch; converges in a few passes
    gear = gear_select(v, maps)
    omega_turb = turbine_speed(v, gear, maps, p)
    T = F_needed * p.wheel_radius / (p.final_drive_ratio * gear_ratio(gear, maps))
    for _ in range(20):
        T_out = transmission_output_torque(T, omega_turb, gear, maps, p)
        T = T + (F_needed * p.wheel_radius - T_out) / (p.final_drive_ratio * gear_ratio(gear, maps))
    omega_eng, _, gear = driveline_speeds(v, T, maps, p)
    return float(fuel_rate(gear, omega_eng, T, maps))


# --------------------------------------------------------------------------
# synthetic surrogate maps

LOWER_HEATING_VALUE = 43.0e6  # J/kg


def synthetic_maps(
    indicated_efficiency: float = 0.38,
    friction_torque: float = 18.0,
    idle_fuel: float = 1.2e-4,
    dsf_gain: float = 0.08,
) -> PowertrainMaps:
    """Analytic stand-ins for calibrated maps.

    Fuel follows a Willans line ``(omega*T + omega*T_fric) / (eta_i * LHV)``
    floored at an idle rate, with a low-load dip that mimics cylinder
    deactivation. Efficiencies are a constant minus parabolic penalties.
    """
    gears = np.arange(1, N_GEARS + 1, dtype=float)
    w_eng = np.linspace(0.0, 700.0, 29)
    T_eng = np.linspace(-40.0, 260.0, 31)
    W, T = np.meshgrid(w_eng, T_eng, indexing="ij")
    c1 = 1.0 / (indicated_efficiency * LOWER_HEATING_VALUE)
    willans = c1 * W * (T + friction_torque)
    dsf = 1.0 - dsf_gain * np.exp(-(((T - 50.0) / 30.0) ** 2)) * ((W > 70.0) & (W < 320.0))
    fuel2d = np.maximum(idle_fuel, willans) * dsf
    fuel = Table("fuel", ("gear", "omega_eng", "T_eng"), ("-", "rad/s", "Nm"),
                 (gears, w_eng, T_eng), np.broadcast_to(fuel2d, (N_GEARS,) + fuel2d.shape).copy(), "kg/s")

    slip_per_gear = np.array([8.0, 6.0, 5.0, 4.0, 3.0, 3.0])
    slip = Table("slip", ("gear", "omega_eng", "T_eng"), ("-", "rad/s", "Nm"),
                 (gears, np.array([0.0, 700.0]), np.array([-40.0, 260.0])),
                 np.broadcast_to(slip_per_gear[:, None, None], (N_GEARS, 2, 2)).copy(), "rad/s")

    w_bsg = np.linspace(0.0, 2000.0, 21)
    T_bsg = np.linspace(-30.0, 30.0, 13)
    Wb, Tb = np.meshgrid(w_bsg, T_bsg, indexing="ij")
    eta_b = np.clip(0.92 - 0.08 * ((Wb - 600.0) / 600.0) ** 2 - 0.06 * (Tb / 30.0) ** 2, 0.6, 0.95)
    bsg_eff = Table("eta_bsg", ("omega_bsg", "T_bsg"), ("rad/s", "Nm"), (w_bsg, T_bsg), eta_b, "-")

    w_t = np.linspace(0.0, 700.0, 15)
    T_t = np.linspace(-150.0, 350.0, 11)
    Wt, Tt = np.meshgrid(w_t, T_t, indexing="ij")
    eta_t = np.clip(0.95 - 0.03 * ((Wt - 200.0) / 200.0) ** 2 - 0.02 * np.abs(Tt) / 350.0, 0.85, 0.97)
    trans_eff = Table("eta_tran", ("omega_turb", "T_turb"), ("rad/s", "Nm"), (w_t, T_t), eta_t, "-")

    w_lim = np.array([0.0, 80.0, 150.0, 600.0, 700.0])
    t_max = np.array([180.0, 180.0, 250.0, 250.0, 200.0])
    eng_min = Table("T_eng_min", ("omega_eng",), ("rad/s",), (w_lim,), np.full(5, -26.4), "Nm")
    eng_max = Table("T_eng_max", ("omega_eng",), ("rad/s",), (w_lim,), t_max, "Nm")
    bsg_min = Table("T_bsg_min", ("omega_eng",), ("rad/s",), (w_lim,), np.full(5, -25.2), "Nm")
    bsg_max = Table("T_bsg_max", ("omega_eng",), ("rad/s",), (w_lim,), np.full(5, 25.2), "Nm")
    return PowertrainMaps(fuel=fuel, slip=slip, bsg_efficiency=bsg_eff,
                          transmission_efficiency=trans_eff,
                          engine_torque_min=eng_min, engine_torque_max=eng_max,
                          bsg_torque_min=bsg_min, bsg_torque_max=bsg_max)


def default_battery(**overrides) -> BatteryParams:
    soc = np.array([0.0, 0.2, 0.5, 0.8, 1.0])
    voc = Table("V_oc", ("soc",), ("-",), (soc,), 44.0 + 8.0 * soc, "V")
    return BatteryParams(voc_curve=voc, **overrides)


def default_plant() -> Plant:
    return Plant()
