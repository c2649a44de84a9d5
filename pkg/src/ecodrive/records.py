"""Trajectory record shared by the optimizer, the controllers and the harness."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SERIES = ("distance", "time", "velocity", "soc", "eng_torque", "bsg_torque", "brake_force", "fuel")


@dataclass(eq=False)
class RunRecord:
    """Per-position series of one run.

    ``fuel`` is cumulative [kg]. Control series hold the controls applied
    when leaving each position, so their last entry is NaN.
    """

    distance: np.ndarray
    time: np.ndarray
    velocity: np.ndarray
    soc: np.ndarray
    eng_torque: np.ndarray
    bsg_torque: np.ndarray
    brake_force: np.ndarray
    fuel: np.ndarray
    mode: str = "full-dp"
    seed: int | None = None
    config_hash: str = ""
    red_violations: int = 0
    fallbacks: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in SERIES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.distance.shape[0]
        if any(getattr(self, name).shape != (n,) for name in SERIES):
            raise ValueError("all series must be 1-D with equal length")

    def check(self):
        """Raise if a record invariant is broken."""
        if np.any(np.diff(self.fuel) < -1e-15):
            raise ValueError("cumulative fuel must be nondecreasing")
        if np.any(np.diff(self.time) <= 0):
            raise ValueError("time must be strictly increasing")
        return self

    @property
    def total_fuel(self) -> float:
        return float(self.fuel[-1] - self.fuel[0])

    @property
    def travel_time(self) -> float:
        return float(self.time[-1] - self.time[0])

    @property
    def initial_soc(self) -> float:
        return float(self.soc[0])

    @property
    def terminal_soc(self) -> float:
        return float(self.soc[-1])

    def to_columns(self) -> dict:
        return {name: getattr(self, name) for name in SERIES}
