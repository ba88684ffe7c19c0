import json
import subprocess
import sys

import numpy as np
import pytest

from sysid import bench
from sysid.cli import main, resolve_seed
from sysid.config import bundled_config_path
from sysid.data_pipeline import read_training_csv
from sysid.dataset import read_raw_csv

DEFAULT = str(bundled_config_path("default"))


def run(*argv):
    return main(list(argv))


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as err:
        main(["bogus", "--config", DEFAULT])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["simulate"])
    assert err.value.code == 1


def test_config_errors_exit_1(tmp_path, capsys):
    assert run("simulate", "--config", str(tmp_path / "missing.ini")) == 1
    assert "config error" in capsys.readouterr().err
    assert run("simulate", "--config", DEFAULT, "--eta", "-1", "--out", str(tmp_path)) == 1
    assert run("identify", "--config", DEFAULT, "--iters", "0", "--out", str(tmp_path)) == 1


def test_malformed_track_reports_file_and_line(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("x_m,y_m,v_target_mps\n0,0,1\n1,0,1\n1,oops,1\n0,1,1\n")
    cfg = bundled_config_path("default").read_text().replace("track = oval", "track = t.csv")
    (tmp_path / "c.ini").write_text(cfg)
    assert run("simulate", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)) == 1
    assert "t.csv:4" in capsys.readouterr().err


def test_bad_data_exits_2(tmp_path, capsys):
    (tmp_path / "train.csv").write_text("t_s,v_x_mps,v_y_mps,omega_radps,delta_rad\n0,1,0,0,0\n0.02,1,x,0,0\n")
    cfg = bundled_config_path("default").read_text().replace(
        "test_offset = 7.0", "test_offset = 7.0\ntrain_csv = train.csv")
    (tmp_path / "c.ini").write_text(cfg)
    assert run("identify", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)) == 2
    assert "train.csv:3" in capsys.readouterr().err


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    def broken(cfg, eta, seed):
        return {"eta": eta, "seed": seed, "ours": {"error": "x"}, "nls": {"error": "x"}}
    monkeypatch.setattr(bench, "sweep_job", broken)
    assert run("noise-sweep", "--config", DEFAULT, "--eta", "0.2", "--out", str(tmp_path)) == 3


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("SYSID_SEED", raising=False)
    assert resolve_seed(None, 4) == 4
    monkeypatch.setenv("SYSID_SEED", "11")
    assert resolve_seed(None, 4) == 11
    assert resolve_seed(2, 4) == 2
    monkeypatch.setenv("SYSID_SEED", "eleven")
    from sysid.errors import ConfigError
    with pytest.raises(ConfigError):
        resolve_seed(None, 4)


def test_simulate_writes_csvs(tmp_path, monkeypatch):
    monkeypatch.setenv("SYSID_SEED", "5")
    assert run("simulate", "--config", DEFAULT, "--eta", "0.4", "--out", str(tmp_path)) == 0
    train = read_raw_csv(tmp_path / "train_seed5.csv")
    test = read_raw_csv(tmp_path / "test_seed5.csv")
    assert len(train) == len(test) == 1500
    assert not np.array_equal(train.data, test.data)
    report = json.loads((tmp_path / "simulate.json").read_text())
    assert report["seed"] == 5 and report["config"]["sim"]["eta"] == 0.4


def test_noiseless_simulate_is_bitwise_reproducible(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--config", DEFAULT, "--seed", "3", "--out", str(tmp_path / d)) == 0
    for name in ("train_seed3.csv", "test_seed3.csv", "simulate.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_prepare_stage(tmp_path):
    assert run("prepare", "--config", DEFAULT, "--out", str(tmp_path)) == 0
    ts = read_training_csv(tmp_path / "training_set.csv", 0.02)
    assert len(ts) == 2 * 1499
    assert len(read_raw_csv(tmp_path / "filtered.csv")) == 1500
    rep = json.loads((tmp_path / "prepare.json").read_text())
    assert rep["rows"] == {"raw": 1500, "processed": 3000, "pairs": 2998}


REPORT_SCHEMA = {
    "command": str, "config": dict, "seed": int, "simulated": bool, "tires_final": dict,
    "identification": dict, "rmse_init": dict, "rmse_final": dict, "curve_rms_final": list,
    "timing": dict,
}
IDENT_SCHEMA = {
    "tires_init": dict, "tires_final": dict, "n_iter": int, "diverged": bool,
    "selected_iteration": int, "init_train_rmse": float, "message": str, "v_x_ref": float,
    "history": list,
}
RECORD_SCHEMA = {
    "iteration": int, "tires": dict, "train_loss": float, "fit_residual_front": float,
    "fit_residual_rear": float, "train_rmse": float, "rmse_vy": float, "rmse_omega": float,
    "curve_rms_front": float, "curve_rms_rear": float,
}
TIRE_KEYS = {"B_f", "C_f", "D_f", "E_f", "B_r", "C_r", "D_r", "E_r"}


def check(obj, schema):
    assert set(obj) == set(schema), set(obj) ^ set(schema)
    for k, t in schema.items():
        assert isinstance(obj[k], t), (k, type(obj[k]))


@pytest.fixture(scope="module")
def identify_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("identify")
    for d in ("a", "b"):
        assert main(["identify", "--config", DEFAULT, "--out", str(base / d)]) == 0
    return base


def test_identify_report_schema(identify_runs):
    rep = json.loads((identify_runs / "a" / "report.json").read_text())
    check(rep, REPORT_SCHEMA)
    check(rep["identification"], IDENT_SCHEMA)
    assert len(rep["identification"]["history"]) == 6
    for rec in rep["identification"]["history"]:
        check(rec, RECORD_SCHEMA)
        assert set(rec["tires"]) == TIRE_KEYS
    assert set(rep["tires_final"]) == TIRE_KEYS
    assert set(rep["rmse_final"]) == {"v_y", "omega", "mean"}
    assert set(rep["timing"]) == {"data_s", "iterations_s", "per_iteration_s"}
    assert rep["timing"]["iterations_s"] < 30.0
    curves = bench.read_force_curves(identify_runs / "a" / "force_curves.csv")
    assert sorted(curves) == list(range(7))


def test_identify_is_deterministic(identify_runs):
    a = json.loads((identify_runs / "a" / "report.json").read_text())
    b = json.loads((identify_runs / "b" / "report.json").read_text())
    assert json.dumps(bench.strip_timing(a), sort_keys=True) == json.dumps(bench.strip_timing(b), sort_keys=True)
    assert (identify_runs / "a" / "force_curves.csv").read_bytes() == \
        (identify_runs / "b" / "force_curves.csv").read_bytes()


def test_resume_from_report_two_iterations(identify_runs, tmp_path):
    # Soft-tire data, starting from the tires a previous identify run produced.
    text = bundled_config_path("soft").read_text().replace(
        "generic_mu = 0.8", f"from_report = {identify_runs / 'a' / 'report.json'}")
    (tmp_path / "resume.ini").write_text(text)
    assert run("identify", "--config", str(tmp_path / "resume.ini"), "--iters", "2",
               "--out", str(tmp_path / "r")) == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    prev = json.loads((identify_runs / "a" / "report.json").read_text())
    assert rep["identification"]["n_iter"] == 2
    assert rep["identification"]["tires_init"] == prev["tires_final"]
    assert rep["rmse_final"]["v_y"] < rep["rmse_init"]["v_y"]
    assert rep["rmse_final"]["omega"] < rep["rmse_init"]["omega"]


def test_nls_command(tmp_path):
    assert run("nls", "--config", DEFAULT, "--out", str(tmp_path)) == 0
    rep = json.loads((tmp_path / "nls_report.json").read_text())
    assert set(rep["tires_final"]) == TIRE_KEYS
    assert rep["rmse_final"]["mean"] < rep["rmse_init"]["mean"]


def test_sweep_single_eta(tmp_path):
    cfg = bundled_config_path("default").read_text().replace("n_seeds = 10", "n_seeds = 2")
    (tmp_path / "c.ini").write_text(cfg)
    assert run("noise-sweep", "--config", str(tmp_path / "c.ini"), "--eta", "0",
               "--out", str(tmp_path / "s")) == 0
    rows = bench.read_sweep_csv(tmp_path / "s" / "sweep.csv")
    assert [(r["eta"], r["method"]) for r in rows] == [(0.0, "ours"), (0.0, "nls")]
    for r in rows:
        assert 0.5 * (r["rmse_vy_mean"] + r["rmse_omega_mean"]) < 0.002
    rep = json.loads((tmp_path / "s" / "sweep.json").read_text())
    assert rep["seeds"] == [0, 1] and rep["failures"] == 0


def test_sweep_csv_round_trip(tmp_path):
    rows = [{"eta": 0.2, "method": "ours", "rmse_vy_mean": 0.1, "rmse_vy_std": 0.01,
             "rmse_omega_mean": 0.2, "rmse_omega_std": 0.02}]
    bench.write_sweep_csv(rows, tmp_path / "s.csv")
    assert bench.read_sweep_csv(tmp_path / "s.csv") == rows


def test_aggregate_uses_population_std():
    runs = [{"eta": 0.0, "ours": {"rmse_vy": v, "rmse_omega": 2 * v}, "nls": {"error": "x"}}
            for v in (1.0, 3.0)]
    rows = bench.aggregate_sweep(runs, [0.0])
    assert rows[0]["rmse_vy_mean"] == 2.0 and rows[0]["rmse_vy_std"] == 1.0
    assert rows[1]["n_ok"] == 0 and np.isnan(rows[1]["rmse_vy_mean"])


def test_adaptation_command(tmp_path):
    assert run("adaptation", "--config", str(bundled_config_path("adaptation")),
               "--out", str(tmp_path)) == 0
    rep = json.loads((tmp_path / "adaptation.json").read_text())
    assert rep["n_iter"] == 2 and rep["improved"] == {"v_y": True, "omega": True}


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sysid", "simulate", "--config", DEFAULT,
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "train_seed0.csv" in proc.stdout


def test_svg_charts(tmp_path, cfg):
    pytest.importorskip("matplotlib")
    bench.run_identify(cfg, tmp_path, n_iter=1, svg=True)
    text = (tmp_path / "force_curves.svg").read_text()
    assert text.lstrip().startswith("<?xml") and "<svg" in text
    from sysid.plots import sweep_svg
    rows = [{"eta": e, "method": m, "rmse_vy_mean": v, "rmse_vy_std": 0.1 * v,
             "rmse_omega_mean": 2 * v, "rmse_omega_std": 0.2 * v}
            for e in (0.0, 0.2) for m, v in (("ours", 0.01), ("nls", 0.03))]
    sweep_svg(rows, tmp_path / "sweep.svg")
    assert "<svg" in (tmp_path / "sweep.svg").read_text()
