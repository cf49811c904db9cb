import json
import subprocess
import sys

import pytest

from riskrl import cli
from riskrl import value_fn as vf


def run(*args):
    return cli.main([str(a) for a in args])


def write_vf(path, spec):
    path.write_text(json.dumps(spec.to_record()))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("env", "gridworld", "--out", d / "grid.json") == 0
    true_vf = write_vf(d / "true.json", vf.entropic(0.5))
    assert run("solve", "--env", d / "grid.json", "--vf", true_vf, "--tol", 1e-10, "--out", d / "q.json") == 0
    assert run("demos", "--env", d / "grid.json", "--q", d / "q.json", "--episodes", 300, "--seed", 2,
               "--out", d / "demos.jsonl") == 0
    assert run("irl", "--env", d / "grid.json", "--demos", d / "demos.jsonl", "--family", "entropic",
               "--restarts", 2, "--seed", 2, "--out", d / "fit.json") == 0
    assert run("eval", "--env", d / "grid.json", "--true-vf", true_vf, "--learned-vf", d / "fit.json",
               "--out", d / "tv.csv") == 0
    return d


def test_pipeline_artifacts(pipeline):
    d = pipeline
    for name in ("grid.json", "q.json", "demos.jsonl", "fit.json", "tv.csv"):
        assert (d / name).exists() and (d / (name + ".manifest.json")).exists()
    man = json.loads((d / "fit.json.manifest.json").read_text())
    assert man["command"] == "irl" and "sha256" in man["inputs"]["demos"]
    summary = json.loads((d / "tv.summary.json").read_text())
    assert summary["mean"] < 0.05 and summary["paths_match"]
    fit = json.loads((d / "fit.json").read_text())
    assert abs(fit["best_theta"]["lam"] - 0.5) < 0.2


def test_solve_is_deterministic(pipeline, tmp_path):
    d = pipeline
    assert run("solve", "--env", d / "grid.json", "--vf", d / "true.json", "--tol", 1e-10, "--out", tmp_path / "q.json") == 0
    assert (tmp_path / "q.json").read_bytes() == (d / "q.json").read_bytes()


def test_demos_deterministic_under_seed(pipeline, tmp_path):
    d = pipeline
    assert run("demos", "--env", d / "grid.json", "--q", d / "q.json", "--episodes", 300, "--seed", 2,
               "--out", tmp_path / "demos.jsonl") == 0
    assert (tmp_path / "demos.jsonl").read_bytes() == (d / "demos.jsonl").read_bytes()


def test_eval_refuses_other_environment(pipeline, tmp_path):
    d = pipeline
    assert run("env", "gridworld", "--gamma", 0.9, "--out", tmp_path / "other.json") == 0
    assert run("eval", "--env", tmp_path / "other.json", "--true-vf", d / "true.json",
               "--learned-vf", d / "fit.json", "--out", tmp_path / "tv.csv") == 2


def test_malformed_map_exit_code(tmp_path):
    (tmp_path / "bad.map").write_text("S..X\n")
    assert run("env", "gridworld", "--map", tmp_path / "bad.map", "--out", tmp_path / "g.json") == 2


def test_missing_file_exit_code(tmp_path):
    assert run("solve", "--env", tmp_path / "none.json", "--vf", tmp_path / "v.json", "--out", tmp_path / "q.json") == 2


def test_no_admissible_radius_exit_code(pipeline, tmp_path):
    vf_path = write_vf(tmp_path / "vf.json", vf.entropic(0.9))
    assert run("solve", "--env", pipeline / "grid.json", "--vf", vf_path, "--strict-k", "--out", tmp_path / "q.json") == 3


def test_rideshare_env(tmp_path):
    assert run("env", "rideshare", "--out", tmp_path / "ride.json") == 0
    rec = json.loads((tmp_path / "ride.json").read_text())
    assert len(rec["states"]) == 45


def test_help_and_entry_point():
    out = subprocess.run([sys.executable, "-m", "riskrl.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "irl" in out.stdout
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve"])
    assert exc.value.code == 2
