import json
import math
import subprocess
import sys

import numpy as np
import pytest
from conftest import SMOKE_OCP

from boomctl.cli import DEFAULTS, apply_override, config_hash, load_config, main
from boomctl.errors import ConfigError
from boomctl.integrators import read_csv_columns

SMOKE_SET = [f"--set=ocp.{k}={v}" for k, v in SMOKE_OCP.items()]


def run(*argv):
    return main([str(a) for a in argv])


def test_missing_config_exits_one_and_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.json"
    assert run("tune", "--config", missing, "--out", tmp_path / "o") == 1
    report = json.loads(capsys.readouterr().err)
    assert report["exit_code"] == 1 and str(missing) in report["message"]


def test_unknown_config_section_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"plnt": {}}))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == 1


def test_solver_non_convergence_exits_two(tmp_path):
    out = tmp_path / "o"
    code = run("plan", "--out", out, "--set", "ocp.max_iter=1", *SMOKE_SET)
    assert code == 2
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "ConvergenceError" and "best" in err
    assert (out / "plan.csv").exists()


def test_bad_override_exits_one(tmp_path):
    assert run("simulate", "--out", tmp_path / "o", "--set", "seed") == 1
    assert run("simulate", "--out", tmp_path / "o", "--set", "seed.x=1") == 1


def test_override_paths_and_types():
    cfg = load_config(None, ["region.alpha=3", "sweep.alphas=[1, 2]", "plant.R_a=2.5",
                             "controller.theta_error=encoder"])
    assert cfg["region"]["alpha"] == 3 and cfg["sweep"]["alphas"] == [1, 2]
    assert cfg["plant"] == {"R_a": 2.5}
    assert cfg["controller"]["theta_error"] == "encoder"
    assert DEFAULTS["region"]["alpha"] == 5.0  # defaults untouched
    with pytest.raises(ConfigError):
        apply_override({}, "novalue")


def test_section_files_resolved_relative_to_config(tmp_path):
    (tmp_path / "region.json").write_text(json.dumps({"alpha": 7.0}))
    (tmp_path / "c.json").write_text(json.dumps({"region": "region.json", "seed": 4}))
    cfg = load_config(tmp_path / "c.json")
    assert cfg["region"]["alpha"] == 7.0 and cfg["region"]["rho"] == 100.0
    assert cfg["seed"] == 4


def test_config_hash_ignores_output_only():
    a = load_config()
    b = load_config(None, ["output=elsewhere"])
    c = load_config(None, ["seed=1"])
    assert config_hash(a) == config_hash(b) != config_hash(c)


def test_manifest_and_artifacts_carry_hash(tmp_path):
    out = tmp_path / "o"
    assert run("tune", "--out", out, "--set", "sweep.alphas=[1.0, 4.0]") == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "tune"
    assert man["artifacts"] == ["gains.json", "tradeoff.csv"]
    assert man["config_hash"] == config_hash(load_config(None, ["sweep.alphas=[1.0, 4.0]"]))
    gains = json.loads((out / "gains.json").read_text())
    assert gains["config_hash"] == man["config_hash"] and len(gains["K"]) == 2
    cols = read_csv_columns(out / "tradeoff.csv")
    np.testing.assert_array_equal(cols["alpha"], [1.0, 4.0])


@pytest.mark.parametrize("cmd", ["simulate", "tune", "identify"])
def test_reruns_are_byte_identical(tmp_path, cmd):
    for d in ("a", "b"):
        assert run(cmd, "--out", tmp_path / d, "--set", "sweep.alphas=[2.0, 6.0]") == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_floats_serialized_with_17_digits(tmp_path):
    out = tmp_path / "o"
    assert run("identify", "--out", out) == 0
    text = (out / "identification.json").read_text()
    rep = json.loads(text)
    est = rep["estimated"]["R_a"]
    assert repr(float(est)) in text or f"{est:.17g}" in text
    assert max(rep["relative_error"].values()) <= 1e-6


def test_drive_verify_certificate(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("drive-verify", "--tol", "1e-4", "--out", out) == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["sup_bound"] < 0.01001 and cert["tolerance"] == 1e-4
    assert json.loads(capsys.readouterr().out)["sup_bound"] == cert["sup_bound"]


def test_closedloop_subcommand_with_plan_and_gains(tmp_path, smoke_plan):
    plan, _ = smoke_plan
    plan.to_csv(tmp_path / "plan.csv")
    (tmp_path / "gains.json").write_text(json.dumps({"K": [0.8, 0.05]}))
    out = tmp_path / "o"
    assert run("closedloop", "--plan", tmp_path / "plan.csv", "--gains",
               tmp_path / "gains.json", "--out", out) == 0
    rep = json.loads((out / "run_report.json").read_text())
    assert rep["nrmse"] <= 0.02 and rep["K"] == [0.8, 0.05]
    cols = read_csv_columns(out / "run.csv")
    assert list(cols) == ["t", "r", "omega_m", "i_a", "u_ff", "u_fb", "u", "delta", "clamped"]


def test_closedloop_rejects_gains_without_K(tmp_path, smoke_plan):
    smoke_plan[0].to_csv(tmp_path / "plan.csv")
    (tmp_path / "gains.json").write_text(json.dumps({"gain": 1}))
    assert run("closedloop", "--plan", tmp_path / "plan.csv", "--gains",
               tmp_path / "gains.json", "--out", tmp_path / "o") == 1


def test_pipeline_summary_one_row_per_alpha(tmp_path):
    out = tmp_path / "o"
    alphas = DEFAULTS["sweep"]["alphas"]
    assert run("pipeline", "--out", out, "--jobs", 2, *SMOKE_SET) == 0
    cols = read_csv_columns(out / "summary.csv")
    np.testing.assert_array_equal(cols["alpha"], alphas)
    assert np.all(np.isfinite(cols["nrmse"])) and np.all(cols["nrmse"] >= 0)
    assert np.all(np.diff(cols["gamma"]) >= -1e-6 * cols["gamma"][1:])
    np.testing.assert_array_equal(cols["theta"], math.pi / 6)
    runs = [p for p in out.iterdir() if p.name.startswith("run_alpha_")]
    assert len(runs) == len(alphas)
    man = json.loads((out / "manifest.json").read_text())
    assert "summary.csv" in man["artifacts"] and "plan.csv" in man["artifacts"]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "boomctl", "drive-verify", "--out",
                          str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["sup_bound"] < 0.01001
    res = subprocess.run([sys.executable, "-m", "boomctl", "plan", "--config",
                          str(tmp_path / "missing.json")], capture_output=True, text=True)
    assert res.returncode == 1 and "missing.json" in res.stderr
