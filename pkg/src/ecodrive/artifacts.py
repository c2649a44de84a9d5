"""Serialized value tables, run records and summary documents."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import zipfile
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dp import CostWeights, GridSpec, ValueTable, build_stages
from .exceptions import ArtifactMismatch
from .powertrain import Plant
from .records import SERIES, RunRecord
from .route import RouteProfile
from .sim import cumulative_cost

FORMAT = "ecodrive-value-table"
FORMAT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)

SERIES_UNITS = {
    "distance": "distance_m", "time": "time_s", "velocity": "velocity_mps", "soc": "soc",
    "eng_torque": "eng_torque_nm", "bsg_torque": "bsg_torque_nm", "brake_force": "brake_force_n",
    "fuel": "fuel_kg",
}


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(doc) -> str:
    """SHA-256 of the canonical JSON form of ``doc``."""
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def _array_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def _write_zip(path, members: dict):
    """Zip archive with fixed timestamps and member order, so equal content gives equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(members):
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, members[name])


def _grid_doc(grid: GridSpec) -> dict:
    doc = asdict(grid)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in doc.items()}


def _grid_from_doc(doc: dict) -> GridSpec:
    return GridSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})


def _jsonable(x):
    """Replace non-finite floats so canonical JSON stays valid."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def value_table_meta(vt: ValueTable) -> dict:
    return {
        "format": FORMAT, "format_version": FORMAT_VERSION, "tool_version": __version__,
        "grid": _grid_doc(vt.grid), "weights": asdict(vt.weights),
        "terminal_soc": vt.terminal_soc, "signals_as_stops": vt.signals_as_stops,
        "route_hash": vt.route_hash, "plant_hash": vt.plant_hash,
        "n_stages": vt.n_stages,
    }


def save_value_table(vt: ValueTable, path, extra: Optional[dict] = None) -> str:
    """Write ``vt`` to ``path``; returns the content hash stored in the metadata.

    Reruns with identical inputs produce byte-identical files.
    """
    values, policy = _array_bytes(vt.values), _array_bytes(vt.policy)
    meta = value_table_meta(vt)
    meta["data_hash"] = hashlib.sha256(values + policy).hexdigest()
    if extra:
        meta["extra"] = _jsonable(extra)
    meta["config_hash"] = config_hash({k: v for k, v in meta.items() if k != "extra"})
    _write_zip(path, {"values.npy": values, "policy.npy": policy,
                      "meta.json": (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode()})
    return meta["data_hash"]


def read_value_table_meta(path) -> dict:
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("meta.json"))


def load_value_table(path, route: RouteProfile, plant: Optional[Plant] = None) -> ValueTable:
    """Load a value table and check it against ``route`` (and ``plant`` when given).

    Raises
    ------
    ArtifactMismatch
        When the file is not a value table, its content hash is wrong, or it
        was solved for a different route or plant.
    """
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            raw_v, raw_p = zf.read("values.npy"), zf.read("policy.npy")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise ArtifactMismatch(f"{path} is not a value-table artifact: {exc}") from exc
    if meta.get("format") != FORMAT or meta.get("format_version") != FORMAT_VERSION:
        raise ArtifactMismatch(f"{path}: unsupported format {meta.get('format')!r} "
                               f"version {meta.get('format_version')!r}")
    if hashlib.sha256(raw_v + raw_p).hexdigest() != meta.get("data_hash"):
        raise ArtifactMismatch(f"{path}: table content does not match its recorded hash")
    if meta["route_hash"] != route.fingerprint():
        raise ArtifactMismatch(f"{path} was solved for a different route")
    if plant is not None and meta["plant_hash"] != plant.fingerprint():
        raise ArtifactMismatch(f"{path} was solved for a different plant")
    grid = _grid_from_doc(meta["grid"])
    weights = CostWeights(**meta["weights"])
    stages = build_stages(route, grid, weights, meta["signals_as_stops"])
    values = np.load(io.BytesIO(raw_v), allow_pickle=False)
    policy = np.load(io.BytesIO(raw_p), allow_pickle=False)
    if values.shape[0] != len(stages) or policy.shape[0] != len(stages) - 1:
        raise ArtifactMismatch(f"{path}: table has {values.shape[0]} positions, route needs {len(stages)}")
    values.setflags(write=False)
    policy.setflags(write=False)
    return ValueTable(grid=grid, weights=weights, stages=stages, values=values, policy=policy,
                      terminal_soc=float(meta["terminal_soc"]), route_hash=meta["route_hash"],
                      plant_hash=meta["plant_hash"], signals_as_stops=bool(meta["signals_as_stops"]))


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def write_record(rec: RunRecord, path):
    """Per-step series as CSV with unit-suffixed headers; controls are blank on the last row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([SERIES_UNITS[name] for name in SERIES])
        cols = [getattr(rec, name) for name in SERIES]
        for row in zip(*cols):
            w.writerow([_fmt(x) for x in row])


def read_record(path, **kw) -> RunRecord:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    by_unit = {u: name for name, u in SERIES_UNITS.items()}
    if sorted(header) != sorted(by_unit):
        raise ValueError(f"{path}: unexpected columns {header}")
    data = np.array([[float(x) if x else np.nan for x in r] for r in rows[1:]], dtype=float)
    return RunRecord(**{by_unit[u]: data[:, j] for j, u in enumerate(header)}, **kw)


def record_summary(rec: RunRecord, weights: Optional[CostWeights] = None) -> dict:
    """Totals of one run, fuel in grams."""
    doc = {
        "mode": rec.mode, "seed": rec.seed, "fuel_g": 1000.0 * rec.total_fuel,
        "time_s": rec.travel_time, "initial_soc": rec.initial_soc, "terminal_soc": rec.terminal_soc,
        "red_violations": rec.red_violations, "fallbacks": rec.fallbacks,
    }
    if weights is not None:
        doc["cost"] = cumulative_cost(rec, weights)
    return doc


def write_rows(rows: list, path, columns: Optional[list] = None):
    """Row-oriented table as CSV; columns default to the keys of the first row."""
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r.get(c) is None else (_fmt(r[c]) if isinstance(r[c], float) else r[c])
                        for c in columns])


def write_json(doc, path):
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
