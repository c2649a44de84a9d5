"""Command-line entry points: ``ecodrive solve | rollout | montecarlo | pareto | perturbation | route``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (
    config_hash,
    load_value_table,
    read_value_table_meta,
    record_summary,
    save_value_table,
    write_json,
    write_record,
    write_rows,
)
from .dp import CostWeights, GridSpec, extract_trajectory, solve_full_route
from .exceptions import (
    ArtifactMismatch,
    EmptyFeasibleSet,
    GridBounds,
    HorizonInfeasible,
    InfeasibleTransition,
    PowerExceedsCapability,
    RouteValidationError,
)
from .powertrain import Plant, PowertrainMaps, default_plant
from .route import RouteProfile, flat_route, randomize_departure, synthetic_urban_route
from .sim import (
    MODES,
    ExperimentConfig,
    MonteCarloResult,
    baseline_driver_run,
    calibrate_driver,
    closed_loop_run,
    monte_carlo,
    pareto_sweep,
    perturbation_study,
)

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4
log = logging.getLogger("ecodrive")

# config key -> (section, field, cast)
CONFIG_KEYS = {
    "gammas": ("exp", "gammas", lambda x: tuple(float(g) for g in x)),
    "horizons_stages": ("exp", "horizons", lambda x: tuple(int(h) for h in x)),
    "mass_perturbation": ("exp", "mass_perturbation", float),
    "n_seeds": ("exp", "n_seeds", int),
    "first_seed": ("exp", "first_seed", int),
    "modes": ("exp", "modes", tuple),
    "los_range_m": ("exp", "los_range", float),
    "min_glide_speed_mps": ("exp", "min_glide_speed", float),
    "approach_accel_mps2": ("exp", "approach_accel", float),
    "signal_margin_s": ("exp", "signal_margin", float),
    "initial_soc": ("exp", "initial_soc", float),
    "n_jobs": ("exp", "n_jobs", int),
    "distance_step_m": ("grid", "distance_step", float),
    "velocity_step_mps": ("grid", "velocity_step", float),
    "soc_step": ("grid", "soc_step", float),
    "eng_torque_step_nm": ("grid", "eng_torque_step", float),
    "bsg_torque_step_nm": ("grid", "bsg_torque_step", float),
    "velocity_bounds_mps": ("grid", "velocity_bounds", tuple),
    "soc_bounds": ("grid", "soc_bounds", tuple),
    "accel_bounds_mps2": ("grid", "accel_bounds", tuple),
    "eng_torque_bounds_nm": ("grid", "eng_torque_bounds", tuple),
    "bsg_torque_bounds_nm": ("grid", "bsg_torque_bounds", tuple),
    "mdot_norm_kgps": ("weights", "mdot_norm", float),
    "stop_dwell_s": ("weights", "stop_dwell", float),
    "terminal_soc": ("run", "terminal_soc", float),
    "signals_as_stops": ("run", "signals_as_stops", bool),
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _gamma(text: str) -> float:
    g = float(text)
    if not 0.0 < g < 1.0:
        raise argparse.ArgumentTypeError(f"gamma must lie strictly inside (0, 1), got {text}")
    return g


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return n


def _perturbation(text: str) -> float:
    x = float(text)
    if not -0.5 < x < 1.0:
        raise argparse.ArgumentTypeError(f"mass perturbation must lie in (-0.5, 1), got {text}")
    return x


def load_config(path) -> dict:
    """Parse a JSON config into ``{"exp": ..., "grid": ..., "weights": ..., "run": ...}`` kwargs."""
    sections = {"exp": {}, "grid": {}, "weights": {}, "run": {}}
    if path is None:
        return sections
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_VALIDATION, f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(EXIT_VALIDATION, f"config {path} must hold a JSON object")
    unknown = sorted(set(doc) - set(CONFIG_KEYS))
    if unknown:
        raise CliError(EXIT_VALIDATION, f"config {path}: unknown keys {unknown}; valid keys: {sorted(CONFIG_KEYS)}")
    for key, value in doc.items():
        section, name, cast = CONFIG_KEYS[key]
        try:
            sections[section][name] = cast(value)
        except (TypeError, ValueError) as exc:
            raise CliError(EXIT_VALIDATION, f"config {path}: bad value for {key!r}: {value!r}") from exc
    return sections


def load_route(spec: str) -> RouteProfile:
    """``builtin:urban``, ``builtin:flat`` or a path to a route JSON file."""
    if spec == "builtin:urban":
        return synthetic_urban_route()
    if spec == "builtin:flat":
        return flat_route()
    path = Path(spec)
    if not path.is_file():
        raise CliError(EXIT_IO, f"route file {spec} not found (or use builtin:urban / builtin:flat)")
    return RouteProfile.load(path)


def load_plant(maps_dir) -> Plant:
    if maps_dir is None:
        return default_plant()
    path = Path(maps_dir)
    if not path.is_dir():
        raise CliError(EXIT_IO, f"maps directory {maps_dir} not found")
    try:
        return Plant(maps=PowertrainMaps.from_csv_dir(path))
    except (KeyError, OSError) as exc:
        raise CliError(EXIT_IO, f"cannot read maps from {maps_dir}: {exc}") from exc


def _settings(args) -> tuple:
    """Config file merged with command-line overrides."""
    cfg = load_config(args.config)
    exp, grid_kw, weights_kw, run = cfg["exp"], cfg["grid"], cfg["weights"], cfg["run"]
    if getattr(args, "gamma", None) is not None:
        exp["gammas"] = tuple(args.gamma)
    if getattr(args, "horizon", None) is not None:
        exp["horizons"] = tuple(args.horizon)
    if getattr(args, "seeds", None) is not None:
        exp["n_seeds"] = args.seeds
    if getattr(args, "first_seed", None) is not None:
        exp["first_seed"] = args.first_seed
    if getattr(args, "mass_perturbation", None) is not None:
        exp["mass_perturbation"] = args.mass_perturbation
    if getattr(args, "modes", None):
        exp["modes"] = tuple(args.modes)
    if getattr(args, "jobs", None) is not None:
        exp["n_jobs"] = args.jobs
    if getattr(args, "signals_as_stops", False):
        run["signals_as_stops"] = True
    try:
        exp_cfg = ExperimentConfig(**exp)
        grid = GridSpec(**grid_kw)
        weights = CostWeights(gamma=exp_cfg.gammas[0], **weights_kw)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_VALIDATION, f"invalid configuration: {exc}") from exc
    settings = {"experiment": exp_cfg.to_dict(), "grid": grid_kw, "weights": weights_kw, "run": run}
    return exp_cfg, grid, weights, run, settings


def _provenance(settings: dict, route: RouteProfile, plant: Plant, **inputs) -> dict:
    return {"tool_version": __version__, "config": settings, "config_hash": config_hash(settings),
            "route_hash": route.fingerprint(), "plant_hash": plant.fingerprint(), **inputs}


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory {path}: {exc}") from exc
    return out


def _load_table(path, route, plant):
    if not Path(path).is_file():
        raise CliError(EXIT_IO, f"value table {path} not found; create it with `ecodrive solve`")
    return load_value_table(path, route, plant)


# --------------------------------------------------------------------------
# subcommands


def cmd_route(args) -> int:
    route = synthetic_urban_route(seed=args.seed) if args.kind == "urban" else flat_route(args.length)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    route.save(out)
    log.info("wrote %s (%d signals, %d stop signs)", out, len(route.signals), len(route.stop_signs))
    return EXIT_OK


def cmd_solve(args) -> int:
    exp, grid, weights, run, settings = _settings(args)
    route, plant = load_route(args.route), load_plant(args.maps)
    out = _outdir(args.out)
    vt = solve_full_route(route, grid, weights, plant, run.get("terminal_soc", 0.5),
                          run.get("signals_as_stops", False))
    prov = _provenance(settings, route, plant)
    data_hash = save_value_table(vt, out / "value_table.npz", extra=prov)
    rec = extract_trajectory(vt, (grid.creep_speed, exp.initial_soc), plant)
    rec.config_hash = prov["config_hash"]
    write_record(rec, out / "trajectory.csv")
    summary = dict(prov, value_table_hash=data_hash, gamma=weights.gamma,
                   run=record_summary(rec, weights))
    write_json(summary, out / "summary.json")
    log.info("fuel %.1f g, time %.1f s, cost %.3f", summary["run"]["fuel_g"], rec.travel_time,
             summary["run"]["cost"])
    return EXIT_OK


def cmd_rollout(args) -> int:
    exp, grid, weights, run, settings = _settings(args)
    route, plant = load_route(args.route), load_plant(args.maps)
    vt = _load_table(args.value_table, route, plant)
    out = _outdir(args.out)
    actual = plant.with_mass_scale(1.0 + exp.mass_perturbation)
    scenario = randomize_departure(route, args.seed) if args.seed is not None else None
    mode = args.mode
    if mode == "baseline-driver":
        rec = baseline_driver_run(exp, route, scenario, actual, grid=vt.grid)
    elif mode == "full-dp":
        rec = extract_trajectory(vt, (vt.grid.creep_speed, exp.initial_soc), actual)
    else:
        rec = closed_loop_run(exp, route, scenario, actual, vt, mode, exp.horizons[0])
    prov = _provenance(settings, route, plant, value_table_hash=read_value_table_meta(args.value_table)["data_hash"])
    rec.config_hash = prov["config_hash"]
    write_record(rec, out / "record.csv")
    write_json(dict(prov, mode=mode, horizon=exp.horizons[0], gamma=vt.weights.gamma,
                    run=record_summary(rec, vt.weights)), out / "summary.json")
    log.info("%s: fuel %.1f g, time %.1f s", mode, 1000.0 * rec.total_fuel, rec.travel_time)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    exp, grid, weights, run, settings = _settings(args)
    route, plant = load_route(args.route), load_plant(args.maps)
    vt = _load_table(args.value_table, route, plant)
    out = _outdir(args.out)
    actual = plant.with_mass_scale(1.0 + exp.mass_perturbation)
    driver = None
    if args.match_driver_time and "baseline-driver" in exp.modes:
        opt_modes = [m for m in exp.modes if m != "baseline-driver"]
        first = monte_carlo(ExperimentConfig(**dict(exp.to_dict(), modes=opt_modes)), route, actual, vt)
        target = first.summary()[opt_modes[0]]["time_mean_s"]
        driver = calibrate_driver(exp, route, actual, target, exp.seeds[:args.calibration_seeds], vt.grid)
        log.info("driver aggressiveness %.3f matches %.1f s", driver.aggressiveness, target)
        rest = monte_carlo(ExperimentConfig(**dict(exp.to_dict(), modes=("baseline-driver",))),
                           route, actual, vt, driver)
        rows = sorted(first.rows + rest.rows, key=lambda r: (r["mode"], r["seed"]))
        failures = first.failures + rest.failures
        result = MonteCarloResult(rows=rows, failures=failures)
    else:
        result = monte_carlo(exp, route, actual, vt, driver)
    write_rows(result.rows, out / "runs.csv")
    kde_rows = []
    for mode in sorted({r["mode"] for r in result.rows}):
        if len(result.samples(mode)) > 2 and np.ptp(result.samples(mode)) > 0:
            xs, dens = result.kde(mode)
            kde_rows += [{"mode": mode, "fuel_g": float(x), "density": float(d)} for x, d in zip(xs, dens)]
    write_rows(kde_rows, out / "fuel_kde.csv", ["mode", "fuel_g", "density"])
    summary = dict(_provenance(settings, route, plant,
                               value_table_hash=read_value_table_meta(args.value_table)["data_hash"]),
                   modes=result.summary(), failures=result.failures)
    if driver is not None:
        summary["driver_aggressiveness"] = driver.aggressiveness
    write_json(summary, out / "summary.json")
    for mode, s in summary["modes"].items():
        log.info("%-16s n=%d fuel %.2f +- %.2f g, time %.1f s", mode, s["n"], s["fuel_mean_g"],
                 s["fuel_std_g"], s["time_mean_s"])
    return EXIT_OK if not result.failures else EXIT_INFEASIBLE


def cmd_pareto(args) -> int:
    exp, grid, weights, run, settings = _settings(args)
    route, plant = load_route(args.route), load_plant(args.maps)
    out = _outdir(args.out)
    rows = pareto_sweep(exp.gammas, route, plant, grid, exp.initial_soc, run.get("signals_as_stops", False))
    write_rows(rows, out / "pareto.csv")
    write_json(dict(_provenance(settings, route, plant), rows=rows), out / "summary.json")
    for r in rows:
        log.info("gamma %.2f: fuel %.1f g, time %.1f s", r["gamma"], r["fuel_g"], r["time_s"])
    return EXIT_OK


def cmd_perturbation(args) -> int:
    exp, grid, weights, run, settings = _settings(args)
    route, plant = load_route(args.route), load_plant(args.maps)
    out = _outdir(args.out)
    rows = perturbation_study(route, plant, exp.gammas, tuple(args.deltas), exp.horizons, grid,
                              exp.initial_soc, run.get("signals_as_stops", False))
    write_rows(rows, out / "perturbation.csv")
    write_json(dict(_provenance(settings, route, plant), rows=rows), out / "summary.json")
    for r in rows:
        log.info("gamma %.2f delta %+.2f N_H %d: J_eps %.4f", r["gamma"], r["delta"], r["horizon"], r["J_eps"])
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecodrive", description="Speed and SoC co-optimization for a 48V mild hybrid.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, gamma_list=False):
        sp.add_argument("--route", required=True, help="route JSON, or builtin:urban / builtin:flat")
        sp.add_argument("--maps", help="directory of powertrain map CSVs (default: built-in synthetic maps)")
        sp.add_argument("--config", help="JSON config with unit-suffixed keys; flags override it")
        sp.add_argument("--out", required=True, help="output directory")
        if gamma_list:
            sp.add_argument("--gamma", type=_gamma, nargs="+", help="fuel/time weights in (0, 1)")
        else:
            sp.add_argument("--gamma", type=_gamma, nargs=1, help="fuel/time weight in (0, 1)")
        sp.add_argument("--signals-as-stops", action="store_true",
                        help="treat every signal as a stop sign in the full-route problem")

    sp = sub.add_parser("route", help="write a built-in route to JSON")
    sp.add_argument("--kind", choices=("urban", "flat"), default="urban")
    sp.add_argument("--seed", type=int, default=15)
    sp.add_argument("--length", type=float, default=1000.0, help="flat route length [m]")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_route)

    sp = sub.add_parser("solve", help="full-route DP; writes the value table and optimal trajectory")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("rollout", help="one closed-loop run against a stored value table")
    common(sp)
    sp.add_argument("--value-table", required=True)
    sp.add_argument("--mode", choices=MODES, default="rollout")
    sp.add_argument("--horizon", type=_positive_int, nargs=1)
    sp.add_argument("--seed", type=int, help="departure seed for signal timing")
    sp.add_argument("--mass-perturbation", type=_perturbation)
    sp.set_defaults(func=cmd_rollout)

    sp = sub.add_parser("montecarlo", help="randomized departure times over several modes")
    common(sp)
    sp.add_argument("--value-table", required=True)
    sp.add_argument("--modes", nargs="+", choices=MODES)
    sp.add_argument("--horizon", type=_positive_int, nargs=1)
    sp.add_argument("--seeds", type=_positive_int, help="number of departure seeds")
    sp.add_argument("--first-seed", type=int)
    sp.add_argument("--mass-perturbation", type=_perturbation)
    sp.add_argument("--jobs", type=int, help="parallel workers (joblib)")
    sp.add_argument("--match-driver-time", action="store_true",
                    help="calibrate the baseline driver to the first optimizer mode's mean trip time")
    sp.add_argument("--calibration-seeds", type=_positive_int, default=20)
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("pareto", help="full-route optimum per gamma")
    common(sp, gamma_list=True)
    sp.set_defaults(func=cmd_pareto)

    sp = sub.add_parser("perturbation", help="rollout with a value table solved for the wrong mass")
    common(sp, gamma_list=True)
    sp.add_argument("--deltas", type=_perturbation, nargs="+", default=[-0.2, 0.2])
    sp.add_argument("--horizon", type=_positive_int, nargs="+")
    sp.set_defaults(func=cmd_perturbation)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (RouteValidationError, ArtifactMismatch, GridBounds, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EmptyFeasibleSet, HorizonInfeasible, InfeasibleTransition, PowerExceedsCapability) as exc:
        print(f"error: optimization infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
