"""Command-line workflow and artifact round trips."""
import csv
import json

import numpy as np
import pytest

from ecodrive.artifacts import load_value_table, read_record, save_value_table, write_record
from ecodrive.cli import EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from ecodrive.dp import CostWeights, GridSpec, solve_full_route
from ecodrive.exceptions import ArtifactMismatch
from ecodrive.route import TrafficSignal, flat_route


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    sigs = (TrafficSignal(position=150.0, initial_offset=20.0), TrafficSignal(position=300.0, initial_offset=70.0))
    route = flat_route(400.0, v_max=13.0, signals=sigs, name="cli-test")
    route.save(root / "route.json")
    assert main(["solve", "--route", str(root / "route.json"), "--out", str(root / "solve"), "--gamma", "0.7"]) == 0
    return root


# solve

def test_solve_rerun_is_byte_identical(workspace):
    out2 = workspace / "solve2"
    assert main(["solve", "--route", str(workspace / "route.json"), "--out", str(out2), "--gamma", "0.7"]) == 0
    first = (workspace / "solve" / "value_table.npz").read_bytes()
    assert first == (out2 / "value_table.npz").read_bytes()
    assert (workspace / "solve" / "trajectory.csv").read_bytes() == (out2 / "trajectory.csv").read_bytes()


def test_solve_summary_carries_provenance(workspace):
    doc = json.loads((workspace / "solve" / "summary.json").read_text())
    for key in ("tool_version", "config_hash", "route_hash", "plant_hash", "value_table_hash"):
        assert doc[key]


def test_corrupted_route_names_the_field(workspace, tmp_path, capsys):
    doc = json.loads((workspace / "route.json").read_text())
    doc["length_m"] = "far"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["solve", "--route", str(bad), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert "length_m" in capsys.readouterr().err


@pytest.mark.parametrize("gamma", ["0", "1", "1.5", "-0.2"])
def test_gamma_outside_open_interval_is_argument_error(tmp_path, gamma):
    with pytest.raises(SystemExit) as err:
        main(["solve", "--route", "builtin:flat", "--out", str(tmp_path), "--gamma", gamma])
    assert err.value.code == EXIT_VALIDATION


def test_missing_route_file_is_io_error(tmp_path):
    assert main(["solve", "--route", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_IO


def test_bad_config_key_is_validation_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"speed": 3}))
    assert main(["solve", "--route", "builtin:flat", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_infeasible_terminal_band_exit_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"terminal_soc": 0.59, "initial_soc": 0.41}))
    route = flat_route(100.0)
    route.save(tmp_path / "r.json")
    code = main(["solve", "--route", str(tmp_path / "r.json"), "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == EXIT_INFEASIBLE


# rollout

def test_rollout_totals_match_solve(workspace):
    out = workspace / "roll"
    assert main(["rollout", "--route", str(workspace / "route.json"), "--out", str(out), "--value-table",
                 str(workspace / "solve" / "value_table.npz"), "--horizon", "10"]) == 0
    solved = json.loads((workspace / "solve" / "summary.json").read_text())["run"]
    rolled = json.loads((out / "summary.json").read_text())["run"]
    assert rolled["fuel_g"] == pytest.approx(solved["fuel_g"], rel=5e-3)
    assert rolled["time_s"] == pytest.approx(solved["time_s"], rel=5e-3)


def test_seeded_ecoand_rollout_is_deterministic(workspace):
    outs = []
    for name in ("eco_a", "eco_b"):
        out = workspace / name
        assert main(["rollout", "--route", str(workspace / "route.json"), "--out", str(out), "--value-table",
                     str(workspace / "solve" / "value_table.npz"), "--mode", "rollout+ecoand", "--seed", "7",
                     "--horizon", "10"]) == 0
        outs.append((out / "record.csv").read_bytes())
    assert outs[0] == outs[1]


def test_rollout_missing_table_is_actionable(workspace, tmp_path, capsys):
    code = main(["rollout", "--route", str(workspace / "route.json"), "--out", str(tmp_path),
                 "--value-table", str(tmp_path / "missing.npz")])
    assert code == EXIT_IO
    assert "ecodrive solve" in capsys.readouterr().err


def test_rollout_refuses_table_of_other_route(workspace, tmp_path):
    code = main(["rollout", "--route", "builtin:flat", "--out", str(tmp_path),
                 "--value-table", str(workspace / "solve" / "value_table.npz")])
    assert code == EXIT_VALIDATION


# experiments

def test_pareto_three_gammas_three_rows(workspace, tmp_path):
    assert main(["pareto", "--route", str(workspace / "route.json"), "--out", str(tmp_path),
                 "--gamma", "0.4", "0.7", "0.82"]) == 0
    rows = _rows(tmp_path / "pareto.csv")
    assert [float(r["gamma"]) for r in rows] == [0.4, 0.7, 0.82]


def test_montecarlo_rows_and_summary(workspace, tmp_path):
    n = 4
    assert main(["montecarlo", "--route", str(workspace / "route.json"), "--out", str(tmp_path),
                 "--value-table", str(workspace / "solve" / "value_table.npz"), "--seeds", str(n),
                 "--first-seed", "1", "--horizon", "10", "--modes", "rollout+los", "baseline-driver"]) == 0
    rows = _rows(tmp_path / "runs.csv")
    summary = json.loads((tmp_path / "summary.json").read_text())["modes"]
    for mode in ("rollout+los", "baseline-driver"):
        mine = [r for r in rows if r["mode"] == mode]
        assert sorted(int(r["seed"]) for r in mine) == list(range(1, n + 1))
        fuel = np.array([float(r["fuel_g"]) for r in mine])
        time = np.array([float(r["time_s"]) for r in mine])
        assert summary[mode]["fuel_mean_g"] == pytest.approx(fuel.mean(), rel=1e-9)
        assert summary[mode]["fuel_std_g"] == pytest.approx(fuel.std(ddof=1), rel=1e-9)
        assert summary[mode]["time_mean_s"] == pytest.approx(time.mean(), rel=1e-9)
    assert _rows(tmp_path / "fuel_kde.csv")


def test_route_subcommand_writes_loadable_file(tmp_path):
    out = tmp_path / "urban.json"
    assert main(["route", "--kind", "urban", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert len(doc["signals"]) == 22 and len(doc["stop_signs"]) == 3


# artifacts

def test_value_table_round_trip(tmp_path, short_route, short_table, plant):
    path = tmp_path / "vt.npz"
    save_value_table(short_table, path)
    back = load_value_table(path, short_route, plant)
    np.testing.assert_array_equal(back.values, short_table.values)
    assert back.weights == short_table.weights
    with pytest.raises(ArtifactMismatch):
        load_value_table(path, flat_route(301.0), plant)
    with pytest.raises(ArtifactMismatch):
        load_value_table(path, short_route, plant.with_mass_scale(1.1))


def test_record_round_trip(tmp_path, short_table, plant):
    from ecodrive.dp import extract_trajectory

    rec = extract_trajectory(short_table, (0.5, 0.5), plant)
    write_record(rec, tmp_path / "r.csv")
    back = read_record(tmp_path / "r.csv")
    for name in ("distance", "time", "velocity", "soc", "fuel"):
        np.testing.assert_allclose(getattr(back, name), getattr(rec, name), rtol=1e-12)


def test_table_for_different_gamma_differs(tmp_path, short_route, plant):
    a = save_value_table(solve_full_route(short_route, GridSpec(), CostWeights(0.5), plant), tmp_path / "a.npz")
    b = save_value_table(solve_full_route(short_route, GridSpec(), CostWeights(0.6), plant), tmp_path / "b.npz")
    assert a != b
