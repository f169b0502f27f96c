import csv
import io
import json

import numpy as np
import pytest

from nioc import cli
from nioc.exceptions import AllRestartsFailed, SingularCovariance


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_json(path):
    return json.loads(path.read_text())


def output_files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.suffix != ".log"}


def csv_rows(path):
    text = "".join(line for line in path.read_text().splitlines(True) if not line.startswith("#"))
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture(scope="module")
def lqg_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("lqg")
    code = run("simulate", "--task", "lqg", "--variant", "full", "--theta", "c_a=0.2,c_v=0.5,sigma_m=0.4",
               "--n-traj", 30, "--seed", 3, "--out", out)
    assert code == cli.EXIT_OK
    return out / "dataset.json"


def test_simulate_is_byte_identical_across_runs(tmp_path):
    for name in ("a", "b"):
        assert run("simulate", "--task", "pendulum", "--seed", 7, "--n-traj", 3, "--out", tmp_path / name) == 0
    a, b = output_files(tmp_path / "a"), output_files(tmp_path / "b")
    assert a == b and set(a) == {"dataset.json", "trajectories.csv"}
    assert (tmp_path / "a" / "simulate.log").exists()


def test_outputs_carry_provenance(tmp_path, lqg_dataset):
    doc = read_json(lqg_dataset)
    prov = doc["provenance"]
    assert prov["tool"] == "nioc" and prov["command"] == "simulate"
    assert len(prov["config_hash"]) == 16 and prov["version"]
    header = (lqg_dataset.parent / "trajectories.csv").read_text().splitlines()[0]
    assert header.startswith("# nioc") and prov["config_hash"] in (lqg_dataset.parent / "trajectories.csv").read_text()
    # timestamps stay out of the outputs
    assert "time" not in json.dumps(prov)


def test_seed_falls_back_to_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("NIOC_SEED", "5")
    run("simulate", "--task", "lqg", "--n-traj", 2, "--out", tmp_path / "env")
    run("simulate", "--task", "lqg", "--n-traj", 2, "--seed", 5, "--out", tmp_path / "flag")
    env = read_json(tmp_path / "env" / "dataset.json")
    flag = read_json(tmp_path / "flag" / "dataset.json")
    assert env["trajectories"] == flag["trajectories"]
    assert env["provenance"]["config"]["seed"] == 5


def test_bad_seed_environment_is_a_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv("NIOC_SEED", "seven")
    assert run("simulate", "--task", "lqg", "--out", tmp_path) == cli.EXIT_CONFIG


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"task": "lqg", "n_traj": 4, "seed": 1, "theta": {"c_a": 0.3}}))
    assert run("simulate", "--config", cfg, "--n-traj", 2, "--out", tmp_path / "o") == 0
    doc = read_json(tmp_path / "o" / "dataset.json")
    assert len(doc["trajectories"]) == 2
    assert doc["theta_true"]["c_a"] == 0.3


def test_zero_trajectories_give_a_valid_empty_dataset(tmp_path):
    assert run("simulate", "--task", "lqg", "--n-traj", 0, "--out", tmp_path) == 0
    doc = read_json(tmp_path / "dataset.json")
    assert doc["trajectories"] == []
    assert csv_rows(tmp_path / "trajectories.csv") == []


def test_lightdark_simulation_detours_toward_the_light(tmp_path):
    assert run("simulate", "--task", "lightdark", "--theta", "c=0,sigma=0.2,p=0", "--n-traj", 5,
               "--out", tmp_path) == 0
    states = np.array(read_json(tmp_path / "dataset.json")["trajectories"])
    assert states[:, :, 0].max(axis=1).mean() > 4.0


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--task", "unicycle"],
        ["simulate", "--task", "lqg", "--theta", "c_a=-1"],
        ["simulate", "--task", "lqg", "--theta", "bogus=1"],
        ["benchmark", "--task", "lqg", "--ranges", "c_a=2:1"],
        ["simulate", "--task", "lqg", "--config", "/nonexistent/run.json"],
        ["benchmark", "--task", "lqg", "--n-datasets", "-1"],
    ],
)
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "nioc: error" in capsys.readouterr().err


def test_corrupted_dataset_exits_2(tmp_path, capsys):
    bad = tmp_path / "dataset.json"
    bad.write_text('{"task": "lqg", "trajectories": [[[0, 0]')
    assert run("fit", bad, "--out", tmp_path) == cli.EXIT_CONFIG
    assert "not valid JSON" in capsys.readouterr().err


def test_solver_failure_exits_3(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise SingularCovariance("covariance is not positive definite")

    monkeypatch.setattr(cli, "generate_dataset", boom)
    assert run("simulate", "--task", "lqg", "--out", tmp_path) == cli.EXIT_SOLVER


def test_optimization_failure_exits_4(tmp_path, lqg_dataset, monkeypatch):
    def boom(*args, **kwargs):
        raise AllRestartsFailed("all restarts ended at a non-finite likelihood")

    monkeypatch.setattr(cli, "fit", boom)
    assert run("fit", lqg_dataset, "--out", tmp_path) == cli.EXIT_OPTIMIZATION


def test_fit_recovers_lqg_parameters_and_is_deterministic(tmp_path, lqg_dataset, capsys):
    for name in ("a", "b"):
        assert run("fit", lqg_dataset, "--restarts", 2, "--seed", 0, "--out", tmp_path / name) == 0
    assert output_files(tmp_path / "a") == output_files(tmp_path / "b")
    doc = read_json(tmp_path / "a" / "fit.json")
    assert max(doc["abs_rel_err"].values()) <= 0.2
    assert len(doc["restarts"]) == 2 and "wall_time_s" not in doc
    assert "ours fit of lqg" in capsys.readouterr().out


def test_fit_rejects_mismatched_task(tmp_path, lqg_dataset):
    assert run("fit", lqg_dataset, "--task", "pendulum", "--out", tmp_path) == cli.EXIT_CONFIG


def test_benchmark_rows_and_determinism(tmp_path):
    argv = ["benchmark", "--task", "lqg", "--variant", "full", "--n-datasets", 2, "--n-traj", 8,
            "--restarts", 1, "--maxiter", 10, "--seed", 2, "--methods", "ours,baseline"]
    for name in ("a", "b"):
        assert run(*argv, "--out", tmp_path / name) == 0
    assert output_files(tmp_path / "a") == output_files(tmp_path / "b")
    rows = csv_rows(tmp_path / "a" / "report.csv")
    assert len(rows) == 2 * 2 * 3
    assert {r["wall_time_s"] for r in rows} == {""}
    summary = read_json(tmp_path / "a" / "summary.json")
    assert set(summary["median_abs_rel_err"]) == {"ours", "baseline"}


def test_single_cell_lightdark_study(tmp_path):
    argv = ["lightdark-study", "--c-grid", "0", "--agents", "belief", "--methods", "ours", "--n-traj", 3,
            "--restarts", 1, "--maxiter", 2, "--seed", 0, "--out", tmp_path]
    assert run(*argv) == 0
    rows = csv_rows(tmp_path / "study.csv")
    assert len(rows) == 1
    assert tuple(rows[0]) == cli.STUDY_COLUMNS
    assert (tmp_path / "trajectories_c0_belief.csv").exists()
