"""Spatial route description and signal phase-and-timing (SPaT) model."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import RouteBounds, RouteValidationError

SCHEMA_VERSION = 1
GREEN, YELLOW, RED = "green", "yellow", "red"


@dataclass(frozen=True)
class Waypoint:
    """Start of a constant-property segment."""

    distance: float  # m
    v_min: float  # m/s
    v_max: float  # m/s
    grade: float = 0.0  # rad


@dataclass(frozen=True)
class TrafficSignal:
    """Fixed-time signal with a green -> yellow -> red cycle."""

    position: float
    cycle_time: float = 90.0
    green: float = 45.0
    yellow: float = 4.0
    red: float = 41.0
    initial_offset: float = 0.0
    dsrc_range: float = 300.0

    @property
    def phase_durations(self):
        return (self.green, self.yellow, self.red)


@dataclass(frozen=True)
class RouteProfile:
    waypoints: tuple
    length: float
    stop_signs: tuple = ()
    signals: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        object.__setattr__(self, "stop_signs", tuple(float(s) for s in self.stop_signs))
        object.__setattr__(self, "signals", tuple(self.signals))

    @property
    def distances(self) -> np.ndarray:
        return np.array([w.distance for w in self.waypoints], dtype=float)

    @property
    def cycle_time(self) -> float:
        return max((s.cycle_time for s in self.signals), default=90.0)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "length_m": self.length,
            "waypoints": [
                {"distance_m": w.distance, "v_min_mps": w.v_min, "v_max_mps": w.v_max, "grade_rad": w.grade}
                for w in self.waypoints
            ],
            "stop_signs": [{"position_m": s} for s in self.stop_signs],
            "signals": [
                {
                    "position_m": s.position, "cycle_time_s": s.cycle_time,
                    "green_s": s.green, "yellow_s": s.yellow, "red_s": s.red,
                    "initial_offset_s": s.initial_offset, "dsrc_range_m": s.dsrc_range,
                }
                for s in self.signals
            ],
        }

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "RouteProfile":
        route = _parse_route(doc)
        violations = validate_route(route)
        if violations:
            raise RouteValidationError(violations)
        return route

    @classmethod
    def load(cls, path) -> "RouteProfile":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise RouteValidationError([f"route file is not valid JSON: {exc}"]) from exc
        return cls.from_dict(doc)


def _require(doc, key, where):
    if not isinstance(doc, dict) or key not in doc:
        raise RouteValidationError([f"missing field {where}{key!r}"])
    return doc[key]


def _number(doc, key, where, default=None):
    if default is not None and key not in doc:
        return float(default)
    value = _require(doc, key, where)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RouteValidationError([f"field {where}{key!r} must be a number, got {value!r}"])
    return float(value)


def _parse_route(doc) -> RouteProfile:
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise RouteValidationError([f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"])
    for key in ("waypoints", "stop_signs", "signals"):
        if not isinstance(_require(doc, key, ""), list):
            raise RouteValidationError([f"field {key!r} must be an array"])
    waypoints = []
    for i, w in enumerate(doc["waypoints"]):
        where = f"waypoints[{i}]."
        waypoints.append(Waypoint(
            distance=_number(w, "distance_m", where), v_min=_number(w, "v_min_mps", where),
            v_max=_number(w, "v_max_mps", where), grade=_number(w, "grade_rad", where, 0.0)))
    stops = [_number(s, "position_m", f"stop_signs[{i}].") for i, s in enumerate(doc["stop_signs"])]
    signals = []
    for i, s in enumerate(doc["signals"]):
        where = f"signals[{i}]."
        signals.append(TrafficSignal(
            position=_number(s, "position_m", where),
            cycle_time=_number(s, "cycle_time_s", where),
            green=_number(s, "green_s", where), yellow=_number(s, "yellow_s", where),
            red=_number(s, "red_s", where),
            initial_offset=_number(s, "initial_offset_s", where, 0.0),
            dsrc_range=_number(s, "dsrc_range_m", where, 300.0)))
    return RouteProfile(waypoints=waypoints, length=_number(doc, "length_m", ""),
                        stop_signs=stops, signals=signals, name=str(doc.get("name", "")))


@dataclass(frozen=True)
class SpatScenario:
    """A departure-time draw shared by every signal on the route."""

    departure_offset: float = 0.0
    seed: Optional[int] = None

    def resolved_offsets(self, route: RouteProfile) -> tuple:
        return tuple((s.initial_offset + self.departure_offset) % s.cycle_time for s in route.signals)


def limits_at(route: RouteProfile, d: float):
    """(v_min, v_max, grade) of the segment containing ``d`` (left-closed)."""
    if not 0.0 <= d <= route.length:
        raise RouteBounds(f"distance {d} outside route [0, {route.length}]")
    i = int(np.searchsorted(route.distances, d, side="right")) - 1
    w = route.waypoints[max(i, 0)]
    return w.v_min, w.v_max, w.grade


def signal_state(sig: TrafficSignal, scenario: SpatScenario, t: float):
    """Phase at time ``t`` and the time left in it (always > 0)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    tau = math.fmod(t + sig.initial_offset + scenario.departure_offset, sig.cycle_time)
    if tau < 0:
        tau += sig.cycle_time
    g_end = sig.green
    y_end = g_end + sig.yellow
    if tau < g_end:
        return GREEN, g_end - tau
    if tau < y_end:
        return YELLOW, y_end - tau
    return RED, sig.cycle_time - tau


def green_windows(sig: TrafficSignal, scenario: SpatScenario, t_now: float, horizon: float):
    """Green intervals ``(t_open, t_close)`` relative to ``t_now`` within ``horizon`` seconds."""
    windows = []
    tau = math.fmod(t_now + sig.initial_offset + scenario.departure_offset, sig.cycle_time)
    if tau < 0:
        tau += sig.cycle_time
    start = -tau  # relative time of the current cycle's green onset
    while start < horizon:
        if sig.green > 0:
            lo, hi = max(start, 0.0), start + sig.green
            if hi > 0:
                windows.append((lo, hi))
        start += sig.cycle_time
    return windows


def randomize_departure(route: RouteProfile, seed) -> SpatScenario:
    """Uniform departure offset on ``[0, t_cyc)`` from a seeded generator."""
    rng = np.random.default_rng(seed)
    return SpatScenario(departure_offset=float(rng.uniform(0.0, route.cycle_time)), seed=seed)


def validate_route(route: RouteProfile) -> list:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    if not route.length > 0:
        out.append(f"length must be > 0, got {route.length}")
    if not route.waypoints:
        out.append("waypoints must not be empty")
    else:
        if route.waypoints[0].distance != 0.0:
            out.append("waypoints[0].distance must be 0")
        for i, w in enumerate(route.waypoints):
            if i > 0 and not w.distance > route.waypoints[i - 1].distance:
                out.append(f"waypoints[{i}].distance must be strictly increasing")
            if not 0 < w.v_min <= w.v_max:
                out.append(f"waypoints[{i}]: need 0 < v_min <= v_max")
            if w.distance > route.length:
                out.append(f"waypoints[{i}] lies beyond the route end")
    for i, s in enumerate(route.stop_signs):
        if not 0 <= s <= route.length:
            out.append(f"stop_signs[{i}] at {s} m lies outside [0, {route.length}]")
    for i, s in enumerate(route.signals):
        if not 0 <= s.position <= route.length:
            out.append(f"signals[{i}] at {s.position} m lies outside [0, {route.length}]")
        if min(s.phase_durations) < 0:
            out.append(f"signals[{i}]: phase durations must be >= 0")
        if not math.isclose(sum(s.phase_durations), s.cycle_time, abs_tol=1e-9):
            out.append(f"signals[{i}]: phase durations must sum to cycle_time")
        if not 0 <= s.initial_offset < s.cycle_time:
            out.append(f"signals[{i}]: initial_offset must lie in [0, cycle_time)")
        if s.dsrc_range <= 0:
            out.append(f"signals[{i}]: dsrc_range must be > 0")
    return out


# --------------------------------------------------------------------------
# synthetic routes

MPH = 0.44704


def flat_route(length=1000.0, v_max=15.6, v_min=0.5, stops=(), signals=(), grade=0.0, name="flat"):
    return RouteProfile(waypoints=[Waypoint(0.0, v_min, v_max, grade)], length=float(length),
                        stop_signs=tuple(stops), signals=tuple(signals), name=name)


def synthetic_urban_route(seed: int = 15, cycle_time: float = 90.0) -> RouteProfile:
    """A 7.4 km urban layout with 22 fixed-time signals and 3 stop signs.

    Speed limits, grades, positions and phase splits are synthetic; only the
    topology (length, signal and stop counts, common 90 s cycle) is fixed.
    """
    rng = np.random.default_rng(seed)
    length = 7400.0
    # 25 control points spaced 200-400 m apart, snapped to 10 m
    gaps = rng.uniform(200.0, 400.0, size=25)
    pts = np.cumsum(gaps)
    pts = np.round((pts - pts[0] + 250.0) * (length - 450.0) / (pts[-1] - pts[0] + 250.0) / 10.0) * 10.0
    stop_slots = rng.choice(np.arange(2, 23), size=3, replace=False)
    kinds = np.array(["signal"] * 25, dtype=object)
    kinds[stop_slots] = "stop"

    limits = np.array([25, 35, 45, 35, 25, 35, 45, 35]) * MPH
    seg_edges = np.round(np.linspace(0.0, length, len(limits) + 1)[:-1] / 10.0) * 10.0
    grades = rng.uniform(-0.01, 0.01, size=len(limits))
    waypoints = [Waypoint(float(d), 0.5, float(v), float(g)) for d, v, g in zip(seg_edges, limits, grades)]

    signals, stops = [], []
    for pos, kind in zip(pts, kinds):
        if kind == "stop":
            stops.append(float(pos))
            continue
        green = float(rng.uniform(35.0, 50.0))
        yellow = 4.0
        red = cycle_time - green - yellow
        signals.append(TrafficSignal(position=float(pos), cycle_time=cycle_time, green=green,
                                     yellow=yellow, red=red,
                                     initial_offset=float(rng.uniform(0.0, cycle_time))))
    return RouteProfile(waypoints=waypoints, length=length, stop_signs=tuple(stops),
                        signals=tuple(signals), name="synthetic-urban-7.4km")
