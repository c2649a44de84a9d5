"""Gridded lookup tables with clamped multilinear interpolation and CSV I/O."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class Table:
    """Values on a rectilinear grid.

    ``axes`` are strictly increasing 1-D arrays; ``values`` has shape
    ``tuple(len(a) for a in axes)``. Queries outside an axis are clamped to
    its edge.
    """

    name: str
    axis_names: tuple
    axis_units: tuple
    axes: tuple
    values: np.ndarray
    unit: str

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", values)
        if values.shape != tuple(len(a) for a in axes):
            raise ValueError(f"{self.name}: values shape {values.shape} does not match axes")
        for name, a in zip(self.axis_names, axes):
            if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
                raise ValueError(f"{self.name}: axis {name!r} must be strictly increasing, len >= 2")
        values.setflags(write=False)
        for a in axes:
            a.setflags(write=False)

    def __call__(self, *coords):
        return self.evaluate(*coords)[0]

    def evaluate(self, *coords):
        """Interpolate at ``coords``; also return a mask of clamped queries."""
        if len(coords) != len(self.axes):
            raise TypeError(f"{self.name} takes {len(self.axes)} coordinates")
        coords = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in coords))
        lo_idx, weights = [], []
        clamped = np.zeros(coords[0].shape, dtype=bool)
        for axis, x in zip(self.axes, coords):
            clamped |= (x < axis[0]) | (x > axis[-1])
            xc = np.clip(x, axis[0], axis[-1])
            i = np.clip(np.searchsorted(axis, xc, side="right") - 1, 0, axis.size - 2)
            w = (xc - axis[i]) / (axis[i + 1] - axis[i])
            lo_idx.append(i)
            weights.append(w)
        out = np.zeros(coords[0].shape)
        for corner in itertools.product((0, 1), repeat=len(self.axes)):
            idx = tuple(i + c for i, c in zip(lo_idx, corner))
            w = np.ones(coords[0].shape)
            for wk, c in zip(weights, corner):
                w = w * (wk if c else 1.0 - wk)
            out = out + w * self.values[idx]
        return out, clamped

    def to_csv(self, path):
        """Write long-format CSV: one header row, one row per grid node (row-major)."""
        header = [f"{n}[{u}]" for n, u in zip(self.axis_names, self.axis_units)]
        header.append(f"{self.name}[{self.unit}]")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for idx in itertools.product(*(range(len(a)) for a in self.axes)):
                row = [repr(float(a[i])) for a, i in zip(self.axes, idx)]
                row.append(repr(float(self.values[idx])))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty table file")
        names, units = [], []
        for col in rows[0]:
            col = col.strip()
            if not col.endswith("]") or "[" not in col:
                raise ValueError(f"{path}: header column {col!r} must look like name[unit]")
            n, u = col[:-1].split("[", 1)
            names.append(n)
            units.append(u)
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
        ndim = len(names) - 1
        axes = tuple(np.unique(data[:, k]) for k in range(ndim))
        shape = tuple(len(a) for a in axes)
        if data.shape[0] != int(np.prod(shape)):
            raise ValueError(f"{path}: expected {np.prod(shape)} rows for a full grid, got {data.shape[0]}")
        expected = np.array(list(itertools.product(*axes)))
        if not np.array_equal(expected, data[:, :ndim]):
            raise ValueError(f"{path}: grid rows are not in row-major order")
        return cls(
            name=names[-1],
            axis_names=tuple(names[:-1]),
            axis_units=tuple(units[:-1]),
            axes=axes,
            values=data[:, -1].reshape(shape),
            unit=units[-1],
        )


def uniform_nodes(lo: float, hi: float, step: float) -> np.ndarray:
    """Nodes ``lo + k*step`` that do not exceed ``hi`` (with float slack)."""
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def cell_position(x, origin: float, step: float, n: int):
    """Return (lower index, weight) of ``x`` on a uniform grid, snapping near-nodes."""
    r = (np.asarray(x, dtype=float) - origin) / step
    ri = np.rint(r)
    r = np.where(np.abs(r - ri) < 1e-9, ri, r)
    i = np.clip(np.floor(r).astype(int), 0, max(n - 2, 0))
    return i, r - i


def as_tuple(x: Sequence[float]) -> tuple:
    return tuple(float(v) for v in x)
