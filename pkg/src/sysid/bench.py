"""End-to-end experiments behind the command line.

Each ``run_*`` function takes an :class:`ExperimentConfig`, does its work
deterministically for the config's seed, writes its files under ``out`` and
returns the report dictionary it wrote. Wall-clock timings live under a
top-level ``"timing"`` key so the rest of a report is reproducible byte for
byte.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data_pipeline import build_error_targets, filter_dataset, preprocess, write_training_csv
from .dataset import read_raw_csv, write_raw_csv
from .errors import DataError, NumericalError, SysIdError
from .identification import IdentifyConfig, curve_rms, iterate, nls_identify, one_step_rmse
from .track_sim import inject_noise, simulate_run
from .vehicle_model import PacejkaParams, pacejka_force

log = logging.getLogger(__name__)

SWEEP_HEADER = ("eta", "method", "rmse_vy_mean", "rmse_vy_std", "rmse_omega_mean", "rmse_omega_std")
CURVE_HEADER = ("alpha_rad", "F_front_N", "F_rear_N", "iteration")
CURVE_ALPHA_MAX = 0.2
CURVE_POINTS = 81
METHODS = ("ours", "nls")


def write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def strip_timing(report: dict) -> dict:
    """Copy of a report without its wall-clock fields, for reproducibility checks."""
    return {k: v for k, v in report.items() if k != "timing"}


# -- data ---------------------------------------------------------------------

def simulate_pair(cfg: ExperimentConfig, eta=None, seed=None, test_eta=0.0):
    """Noisy training run and a separate test run further along the track.

    The test run's noise, if any, uses ``seed + 1`` so it is independent of
    the training noise.
    """
    eta = cfg.sim.eta if eta is None else eta
    seed = cfg.sim.seed if seed is None else seed
    track = cfg.load_track()
    clean = simulate_run(track, cfg.vehicle, cfg.tires_gt, replace(cfg.sim, eta=0.0))
    test = simulate_run(track, cfg.vehicle, cfg.tires_gt,
                        replace(cfg.sim, eta=0.0, start_offset=cfg.test_offset))
    train = inject_noise(clean, eta, seed)
    if test_eta:
        test = inject_noise(test, test_eta, seed + 1)
    return train, test


def load_data(cfg: ExperimentConfig):
    """Training and test data from the configured CSV files, else from the simulator.

    Returns ``(train, test, simulated)``. Simulated test data is noiseless.
    """
    if cfg.train_csv:
        train = read_raw_csv(cfg.resolve(cfg.train_csv))
        test = read_raw_csv(cfg.resolve(cfg.test_csv)) if cfg.test_csv else None
        return train, test, False
    train, test = simulate_pair(cfg)
    return train, test, True


def identify_config(cfg: ExperimentConfig, n_iter=None) -> IdentifyConfig:
    s = cfg.solver
    return IdentifyConfig(n_iter=n_iter or s.n_iter, train=cfg.train, n_starts=s.n_starts,
                          divergence_factor=s.divergence_factor, early_stop=s.early_stop)


def _rmse_dict(pair):
    if pair is None:
        return None
    return {"v_y": pair[0], "omega": pair[1], "mean": 0.5 * (pair[0] + pair[1])}


# -- force curves -------------------------------------------------------------

def force_curve_rows(history, tires_init: PacejkaParams, alpha_max=CURVE_ALPHA_MAX,
                     n=CURVE_POINTS):
    """Rows of ``alpha, F_front, F_rear, iteration``; iteration 0 is the initial guess."""
    alpha = np.linspace(-alpha_max, alpha_max, n)
    rows = []
    for i, tires in enumerate([tires_init] + [h.tires for h in history]):
        ff, fr = pacejka_force(alpha, tires.front), pacejka_force(alpha, tires.rear)
        rows.extend(zip(alpha.tolist(), ff.tolist(), fr.tolist(), [i] * n))
    return rows


def write_force_curves(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for a, ff, fr, it in rows:
            w.writerow([repr(a), repr(ff), repr(fr), it])


def read_force_curves(path):
    """Dictionary ``iteration -> (alpha, F_front, F_rear)`` arrays."""
    with open(path) as fh:
        header = tuple(fh.readline().strip().split(","))
    if header != CURVE_HEADER:
        raise ValueError(f"{path}:1: expected header {','.join(CURVE_HEADER)}")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {int(it): (arr[arr[:, 3] == it, 0], arr[arr[:, 3] == it, 1], arr[arr[:, 3] == it, 2])
            for it in np.unique(arr[:, 3])}


# -- commands -----------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.sim.seed
    train, test = simulate_pair(cfg, test_eta=cfg.sim.eta)
    train_path, test_path = out / f"train_seed{seed}.csv", out / f"test_seed{seed}.csv"
    write_raw_csv(train, train_path)
    write_raw_csv(test, test_path)
    report = {"command": "simulate", "config": cfg.to_dict(), "seed": seed,
              "files": {"train": train_path.name, "test": test_path.name},
              "rows": {"train": len(train), "test": len(test)}}
    write_json(report, out / "simulate.json")
    return report


def run_prepare(cfg: ExperimentConfig, out) -> dict:
    """Write the filtered log and the network's training pairs under the
    initial tires, for inspecting the pipeline on its own.

    The filtered log is written before mirroring, since the raw CSV format
    has no block column; the training pairs include the mirrored half.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    train, _, simulated = load_data(cfg)
    filtered = preprocess(train, cfg.solver.cutoff_hz, augment=False)
    processed = preprocess(train, cfg.solver.cutoff_hz, cfg.solver.augment)
    pairs = build_error_targets(processed, cfg.vehicle, cfg.tires_init)
    write_raw_csv(filtered, out / "filtered.csv")
    write_training_csv(pairs, out / "training_set.csv")
    rms = np.sqrt(np.mean(pairs.targets ** 2, axis=0))
    report = {"command": "prepare", "config": cfg.to_dict(), "seed": cfg.seed,
              "simulated": simulated,
              "files": {"filtered": "filtered.csv", "training_set": "training_set.csv"},
              "rows": {"raw": len(train), "processed": len(processed), "pairs": len(pairs)},
              "target_rms": {"v_y": float(rms[0]), "omega": float(rms[1])}}
    write_json(report, out / "prepare.json")
    return report


def run_identify(cfg: ExperimentConfig, out, n_iter=None, svg=False) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    train, test, simulated = load_data(cfg)
    processed = preprocess(train, cfg.solver.cutoff_hz, cfg.solver.augment)
    t1 = time.perf_counter()
    rep = iterate(processed, cfg.vehicle, cfg.tires_init, identify_config(cfg, n_iter),
                  test_ds=test, tires_true=cfg.tires_gt if simulated else None)
    t2 = time.perf_counter()

    report = {
        "command": "identify",
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "simulated": simulated,
        "tires_final": rep.tires.to_dict(),
        "identification": rep.to_dict(timing=False),
        "rmse_init": _rmse_dict(one_step_rmse(cfg.tires_init, cfg.vehicle, test)) if test else None,
        "rmse_final": _rmse_dict(one_step_rmse(rep.tires, cfg.vehicle, test)) if test else None,
        "curve_rms_final": list(curve_rms(rep.tires, cfg.tires_gt)) if simulated else None,
        "timing": {"data_s": t1 - t0, "iterations_s": t2 - t1,
                   "per_iteration_s": [h.seconds for h in rep.history]},
    }
    rows = force_curve_rows(rep.history, cfg.tires_init)
    write_force_curves(rows, out / "force_curves.csv")
    write_json(report, out / "report.json")
    if svg:
        from .plots import force_curve_svg
        force_curve_svg(rows, out / "force_curves.svg", truth=cfg.tires_gt if simulated else None)
    return report


def run_nls(cfg: ExperimentConfig, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    train, test, simulated = load_data(cfg)
    filtered = filter_dataset(train, cfg.solver.cutoff_hz) if cfg.solver.cutoff_hz else train
    tires = nls_identify(filtered, cfg.vehicle, cfg.tires_init, weights=cfg.solver.nls_weights,
                         n_starts=cfg.solver.n_starts, seed=cfg.seed)
    report = {
        "command": "nls",
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "simulated": simulated,
        "tires_final": tires.to_dict(),
        "rmse_init": _rmse_dict(one_step_rmse(cfg.tires_init, cfg.vehicle, test)) if test else None,
        "rmse_final": _rmse_dict(one_step_rmse(tires, cfg.vehicle, test)) if test else None,
        "curve_rms_final": list(curve_rms(tires, cfg.tires_gt)) if simulated else None,
        "timing": {"total_s": time.perf_counter() - t0},
    }
    write_json(report, out / "nls_report.json")
    return report


def sweep_job(cfg: ExperimentConfig, eta: float, seed: int) -> dict:
    """One grid point: both methods on the same noisy data, scored on a clean test run."""
    row = {"eta": eta, "seed": seed}
    try:
        cfg = cfg.with_seed(seed)
        train, test = simulate_pair(cfg, eta=eta, seed=seed)
        filtered = filter_dataset(train, cfg.solver.cutoff_hz)
    except SysIdError as exc:
        for m in METHODS:
            row[m] = {"error": f"{type(exc).__name__}: {exc}"}
        return row

    t0 = time.perf_counter()
    try:
        data = preprocess(train, cfg.solver.cutoff_hz, cfg.solver.augment)
        rep = iterate(data, cfg.vehicle, cfg.tires_init, identify_config(cfg))
        r = one_step_rmse(rep.tires, cfg.vehicle, test)
        row["ours"] = {"rmse_vy": r[0], "rmse_omega": r[1], "diverged": rep.diverged,
                       "iterations": rep.n_iter,
                       "curve_rms": list(curve_rms(rep.tires, cfg.tires_gt)),
                       "seconds": time.perf_counter() - t0}
    except SysIdError as exc:
        row["ours"] = {"error": f"{type(exc).__name__}: {exc}"}

    t0 = time.perf_counter()
    try:
        tires = nls_identify(filtered, cfg.vehicle, cfg.tires_init,
                             weights=cfg.solver.nls_weights, n_starts=cfg.solver.n_starts,
                             seed=seed)
        r = one_step_rmse(tires, cfg.vehicle, test)
        row["nls"] = {"rmse_vy": r[0], "rmse_omega": r[1],
                      "curve_rms": list(curve_rms(tires, cfg.tires_gt)),
                      "seconds": time.perf_counter() - t0}
    except SysIdError as exc:
        row["nls"] = {"error": f"{type(exc).__name__}: {exc}"}
    return row


def _sweep_job_star(args):
    return sweep_job(*args)


def aggregate_sweep(runs, etas):
    """Mean and population std per (eta, method) over the runs that succeeded."""
    rows = []
    for eta in etas:
        for m in METHODS:
            ok = [r[m] for r in runs if r["eta"] == eta and "error" not in r[m]]
            vy = np.array([o["rmse_vy"] for o in ok])
            om = np.array([o["rmse_omega"] for o in ok])
            stats = [(float(a.mean()), float(a.std())) if len(a) else (np.nan, np.nan)
                     for a in (vy, om)]
            rows.append({"eta": eta, "method": m,
                         "rmse_vy_mean": stats[0][0], "rmse_vy_std": stats[0][1],
                         "rmse_omega_mean": stats[1][0], "rmse_omega_std": stats[1][1],
                         "n_ok": len(ok)})
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([repr(float(r["eta"])), r["method"]]
                       + [repr(float(r[k])) for k in SWEEP_HEADER[2:]])


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != SWEEP_HEADER:
            raise ValueError(f"{path}:1: expected header {','.join(SWEEP_HEADER)}")
        return [{"eta": float(r[0]), "method": r[1],
                 **{k: float(v) for k, v in zip(SWEEP_HEADER[2:], r[2:])}} for r in reader]


def sweep_ratios(rows):
    """Channel-averaged NLS/ours RMSE ratio per eta."""
    by = {(r["eta"], r["method"]): 0.5 * (r["rmse_vy_mean"] + r["rmse_omega_mean"]) for r in rows}
    return {eta: by[(eta, "nls")] / by[(eta, "ours")]
            for eta in sorted({r["eta"] for r in rows}) if by[(eta, "ours")] > 0}


def run_noise_sweep(cfg: ExperimentConfig, out, jobs=1, etas=None, svg=False) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    etas = tuple(cfg.solver.etas if etas is None else etas)
    seeds = [cfg.seed + i for i in range(cfg.solver.n_seeds)]
    grid = [(cfg, eta, seed) for eta in etas for seed in seeds]
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_sweep_job_star, grid))
    else:
        runs = [sweep_job(*g) for g in grid]
    elapsed = time.perf_counter() - t0

    rows = aggregate_sweep(runs, etas)
    write_sweep_csv(rows, out / "sweep.csv")
    failures = sum("error" in r[m] for r in runs for m in METHODS)
    n_total = len(runs) * len(METHODS)
    report = {
        "command": "noise-sweep",
        "config": cfg.to_dict(),
        "seeds": seeds,
        "etas": list(etas),
        "summary": rows,
        "ratio_nls_over_ours": {repr(k): v for k, v in sweep_ratios(rows).items()},
        "diverged_runs": {repr(eta): sum(bool(r["ours"].get("diverged")) for r in runs
                                         if r["eta"] == eta) for eta in etas},
        "failures": failures,
        "runs": [{k: v for k, v in r.items()} for r in runs],
        "timing": {"total_s": elapsed},
    }
    for r in report["runs"]:
        for m in METHODS:
            r[m] = {k: v for k, v in r[m].items() if k != "seconds"}
    write_json(report, out / "sweep.json")
    if svg:
        from .plots import sweep_svg
        sweep_svg(rows, out / "sweep.svg")
    if failures > cfg.solver.max_failure_fraction * n_total:
        raise NumericalError(f"{failures} of {n_total} sweep runs failed "
                             f"(limit {cfg.solver.max_failure_fraction:.0%})")
    return report


def run_adaptation(cfg: ExperimentConfig, out, n_iter=2) -> dict:
    """Identify from the configured start tires on data from the ground-truth tires.

    With the bundled adaptation profile the start is the hard-tire model and
    the data come from soft tires.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    train, test, simulated = load_data(cfg)
    if test is None:
        raise DataError("adaptation needs test data (set test_csv)")
    processed = preprocess(train, cfg.solver.cutoff_hz, cfg.solver.augment)
    before = one_step_rmse(cfg.tires_init, cfg.vehicle, test)
    t0 = time.perf_counter()
    rep = iterate(processed, cfg.vehicle, cfg.tires_init, identify_config(cfg, n_iter),
                  test_ds=test)
    elapsed = time.perf_counter() - t0
    after = one_step_rmse(rep.tires, cfg.vehicle, test)
    report = {
        "command": "adaptation",
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "n_iter": n_iter,
        "tires_start": cfg.tires_init.to_dict(),
        "tires_adapted": rep.tires.to_dict(),
        "diverged": rep.diverged,
        "rmse_before": _rmse_dict(before),
        "rmse_after": _rmse_dict(after),
        "improved": {"v_y": after[0] < before[0], "omega": after[1] < before[1]},
        "identification": rep.to_dict(timing=False),
        "timing": {"iterations_s": elapsed},
    }
    write_json(report, out / "adaptation.json")
    return report
