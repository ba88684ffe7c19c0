"""Tire identification from on-track data.

The loop: learn the nominal model's one-step error with a small network,
roll the corrected model through a slow steering ramp, read axle forces off
the resulting quasi-steady states, refit the Magic Formula, and use the fit
as the next nominal model. :func:`nls_identify` is the classical baseline
that fits the tires directly to one-step residuals.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .data_pipeline import build_error_targets, one_step_predictions
from .dataset import RawDataset
from .errors import DataError, DivergenceError, FitError
from .lsq import levenberg_marquardt
from .residual_net import ResidualNet, TrainConfig
from .vehicle_model import (
    AxleTire,
    ControlInput,
    LateralState,
    PacejkaParams,
    VehicleParams,
    euler_step,
    pacejka_force,
    slip_angles,
    steady_state_forces,
)

log = logging.getLogger(__name__)

# Slip-angle region of interest (front, rear) for comparing force curves.
ROI = (0.15, 0.13)
RAMP_DURATION = 10.0
RAMP_T_S = 0.02
RAMP_DELTA_MAX = 0.4


@dataclass
class CorrectedModel:
    tires: PacejkaParams
    veh: VehicleParams
    net: ResidualNet
    T_s: float

    def step(self, state: LateralState, u: ControlInput) -> LateralState:
        return corrected_step(self, state, u)


def corrected_step(cm: CorrectedModel, state, u) -> LateralState:
    """Nominal Euler prediction plus the network's error estimate."""
    nominal = euler_step(state, u, cm.veh, cm.tires, cm.T_s)
    e = cm.net(np.array([u[0], state[0], state[1], u[1]], dtype=float))
    return LateralState(nominal[0] + e[0], nominal[1] + e[1])


@dataclass
class VirtualSteadyStateData:
    v_x: float
    v_y: np.ndarray
    omega: np.ndarray
    delta: np.ndarray

    def __len__(self):
        return len(self.delta)

    def as_array(self):
        return np.column_stack([np.full(len(self), self.v_x), self.v_y, self.omega, self.delta])


def generate_virtual_data(cm: CorrectedModel, v_x_ref: float, state_limits=None,
                          duration=RAMP_DURATION, T_s=RAMP_T_S,
                          delta_max=RAMP_DELTA_MAX) -> VirtualSteadyStateData:
    """Roll the corrected model through a linear steering ramp at constant speed.

    Starting from rest laterally, ``delta`` rises linearly from 0 to
    ``delta_max`` over ``duration`` seconds. Sample ``k`` pairs ``delta_k``
    with the state reached after applying it. ``state_limits`` is an optional
    ``(max |v_y|, max |omega|)`` beyond which the rollout is declared divergent.
    """
    if not v_x_ref > 0:
        raise DataError("reference speed must be > 0")
    n = int(round(duration / T_s))
    cm = replace(cm, T_s=T_s)
    delta = delta_max * np.arange(n) / (n - 1)
    v_y = np.empty(n)
    omega = np.empty(n)
    x = LateralState(0.0, 0.0)
    for k in range(n):
        x = corrected_step(cm, x, ControlInput(v_x_ref, delta[k]))
        v_y[k], omega[k] = x
        if not np.all(np.isfinite(x)) or (
                state_limits is not None
                and (abs(x[0]) > state_limits[0] or abs(x[1]) > state_limits[1])):
            raise DivergenceError("corrected-model rollout diverged", step=k)
    return VirtualSteadyStateData(float(v_x_ref), v_y, omega, delta)


class ForcePoints(NamedTuple):
    alpha_f: np.ndarray
    F_f: np.ndarray
    alpha_r: np.ndarray
    F_r: np.ndarray


def extract_force_points(vd: VirtualSteadyStateData, veh: VehicleParams) -> ForcePoints:
    """Slip angles and steady-state axle forces for every virtual sample."""
    v_x = np.full(len(vd), vd.v_x)
    u = ControlInput(v_x, vd.delta)
    alpha_f, alpha_r = slip_angles(LateralState(vd.v_y, vd.omega), u, veh)
    F_r, F_f = steady_state_forces(u, vd.omega, veh)
    return ForcePoints(alpha_f, F_f, alpha_r, F_r)


# Magic Formula coefficient bounds; D bounds scale with the force data.
B_BOUNDS = (0.1, 50.0)
C_BOUNDS = (0.5, 3.0)
E_BOUNDS = (-10.0, 1.0)
D_BOUNDS_REL = (0.1, 10.0)
N_STARTS = 5


def _axle_bounds(d_scale):
    lo = np.array([B_BOUNDS[0], C_BOUNDS[0], D_BOUNDS_REL[0] * d_scale, E_BOUNDS[0]])
    hi = np.array([B_BOUNDS[1], C_BOUNDS[1], D_BOUNDS_REL[1] * d_scale, E_BOUNDS[1]])
    return lo, hi


def _jittered_starts(x0, lower, upper, n_starts, seed):
    """``x0`` plus ``n_starts - 1`` multiplicative jitters of it, clipped to the box."""
    rng = np.random.default_rng(seed)
    starts = [np.clip(x0, lower, upper)]
    for _ in range(n_starts - 1):
        jitter = np.exp(rng.uniform(-0.5, 0.5, x0.size))
        x = x0 * jitter
        # E is a signed curvature term; jitter it additively.
        e_idx = np.arange(3, x0.size, 4)
        x[e_idx] = x0[e_idx] + rng.uniform(-0.5, 0.5, e_idx.size)
        starts.append(np.clip(x, lower, upper))
    return starts


def _multistart(fun, x0, lower, upper, n_starts, seed, cost_floor=0.0, **lm_kwargs):
    """Best of several LM runs. A run that stops on the iteration cap still
    counts if its cost is below ``cost_floor`` (a flat valley of exact fits)."""
    results, costs = [], []
    for start in _jittered_starts(np.asarray(x0, dtype=float), lower, upper, n_starts, seed):
        res = levenberg_marquardt(fun, start, lower, upper, **lm_kwargs)
        costs.append(res.cost)
        ok = res.converged or res.cost <= cost_floor
        if ok and np.isfinite(res.cost) and np.all(np.isfinite(res.x)):
            results.append(res)
    if not results:
        raise FitError(f"none of {n_starts} starts converged (final costs {np.round(costs, 6).tolist()})")
    best_cost = min(r.cost for r in results)
    ties = [r for r in results if r.cost <= best_cost * (1 + 1e-9) + 1e-300]
    return min(ties, key=lambda r: float(np.linalg.norm(r.x)))


def fit_pacejka(alpha, force, init: AxleTire, n_starts=N_STARTS, seed=0) -> AxleTire:
    """Least-squares Magic Formula fit to ``(alpha, force)`` points for one axle."""
    alpha = np.asarray(alpha, dtype=float)
    force = np.asarray(force, dtype=float)
    ok = np.isfinite(alpha) & np.isfinite(force)
    alpha, force = alpha[ok], force[ok]
    if alpha.size < 20 or np.ptp(alpha) <= 1e-6:
        raise FitError("need at least 20 points spanning a non-degenerate slip range")
    d_scale = float(np.max(np.abs(force)))
    if d_scale == 0:
        raise FitError("all forces are zero")
    lower, upper = _axle_bounds(d_scale)

    def residual(p):
        return pacejka_force(alpha, AxleTire(*p)) - force

    # RMS residual below 1e-4 of the force scale counts as an exact fit.
    floor = 0.5 * alpha.size * (1e-4 * d_scale) ** 2
    best = _multistart(residual, init.as_array(), lower, upper, n_starts, seed, cost_floor=floor)
    return AxleTire(*best.x)


def fit_axles(points: ForcePoints, init: PacejkaParams, n_starts=N_STARTS, seed=0):
    front = fit_pacejka(points.alpha_f, points.F_f, init.front, n_starts, seed)
    rear = fit_pacejka(points.alpha_r, points.F_r, init.rear, n_starts, seed + 1)
    return PacejkaParams(front, rear)


def one_step_rmse(tires: PacejkaParams, veh: VehicleParams, test: RawDataset):
    """Per-channel RMSE ``(v_y, omega)`` of nominal one-step predictions."""
    if len(test) < 2:
        raise DataError("test set needs at least two samples")
    _, pred, observed = one_step_predictions(test, veh, tires)
    if len(pred) == 0:
        raise DataError("test set has no usable transitions")
    err = pred - observed
    rmse = np.sqrt(np.mean(err ** 2, axis=0))
    return float(rmse[0]), float(rmse[1])


def curve_rms(tires: PacejkaParams, reference: PacejkaParams, roi=ROI, n=201, relative_to="D"):
    """RMS gap between two sets of force curves over the slip region of interest.

    Returns ``(front, rear)``. With ``relative_to="D"`` each gap is divided by
    the reference peak force; with ``"rms"`` by the reference curve's RMS.
    """
    out = []
    for a, b, amax in ((tires.front, reference.front, roi[0]), (tires.rear, reference.rear, roi[1])):
        alpha = np.linspace(-amax, amax, n)
        fa, fb = pacejka_force(alpha, a), pacejka_force(alpha, b)
        gap = np.sqrt(np.mean((fa - fb) ** 2))
        scale = abs(b.D) if relative_to == "D" else np.sqrt(np.mean(fb ** 2))
        out.append(float(gap / scale))
    return tuple(out)


def nls_identify(ds: RawDataset, veh: VehicleParams, tires_init: PacejkaParams,
                 weights=(1.0, 1.0), n_starts=N_STARTS, seed=0, max_iter=500) -> PacejkaParams:
    """Fit all eight coefficients to one-step prediction residuals.

    Minimises ``sum_k w_vy^2 (v_y,k+1 - v_y_hat)^2 + w_om^2 (omega_k+1 - omega_hat)^2``.
    D bounds are taken relative to the initial guess, as there is no force
    data to scale them by.
    """
    k = np.flatnonzero(ds.pair_mask())
    k = k[ds.v_x[k] > 0]
    if len(k) < 8:
        raise DataError("too few usable transitions for NLS")
    d = ds.data
    state = LateralState(d[k, 1], d[k, 2])
    u = ControlInput(d[k, 0], d[k, 3])
    nxt = d[k + 1][:, 1:3]
    w = np.asarray(weights, dtype=float)

    def residual(p):
        pred = euler_step(state, u, veh, PacejkaParams.from_array(p), ds.T_s)
        return np.concatenate([w[0] * (nxt[:, 0] - pred[0]), w[1] * (nxt[:, 1] - pred[1])])

    lo_f, hi_f = _axle_bounds(tires_init.front.D)
    lo_r, hi_r = _axle_bounds(tires_init.rear.D)
    lower, upper = np.concatenate([lo_f, lo_r]), np.concatenate([hi_f, hi_r])
    try:
        best = _multistart(residual, tires_init.as_array(), lower, upper, n_starts, seed,
                           max_iter=max_iter)
    except FitError as exc:
        raise FitError(f"NLS did not converge: {exc}") from None
    return PacejkaParams.from_array(best.x)


@dataclass
class IterationRecord:
    iteration: int
    tires: PacejkaParams
    train_loss: float
    fit_residual_front: float
    fit_residual_rear: float
    train_rmse: float = float("nan")
    rmse_vy: float | None = None
    rmse_omega: float | None = None
    curve_rms_front: float | None = None
    curve_rms_rear: float | None = None
    seconds: float = 0.0

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "tires"}
        d["tires"] = self.tires.to_dict()
        return d


@dataclass
class IdentificationReport:
    tires_init: PacejkaParams
    history: list = field(default_factory=list)
    diverged: bool = False
    message: str = ""
    v_x_ref: float | None = None
    init_train_rmse: float = float("nan")
    nets: list = field(default_factory=list, repr=False)

    @property
    def selected_iteration(self) -> int:
        """Iteration whose parameters :attr:`tires` returns (0 is the initial guess).

        A completed run returns its last iteration. After a divergence the
        best-so-far candidate is the one with the lowest channel-averaged
        one-step RMSE on the training data, the initial guess included.
        """
        if not self.history:
            return 0
        if not self.diverged:
            return self.history[-1].iteration
        scores = [self.init_train_rmse] + [r.train_rmse for r in self.history]
        return int(np.nanargmin(scores)) if np.any(np.isfinite(scores)) else self.history[-1].iteration

    @property
    def tires(self) -> PacejkaParams:
        """Final parameters (best-so-far if the run diverged)."""
        i = self.selected_iteration
        return self.tires_init if i == 0 else self.history[i - 1].tires

    @property
    def n_iter(self) -> int:
        return len(self.history)

    def to_dict(self, timing=True):
        hist = []
        for rec in self.history:
            d = rec.to_dict()
            if not timing:
                d.pop("seconds")
            hist.append(d)
        return {
            "tires_init": self.tires_init.to_dict(),
            "tires_final": self.tires.to_dict(),
            "n_iter": self.n_iter,
            "diverged": self.diverged,
            "selected_iteration": self.selected_iteration,
            "init_train_rmse": self.init_train_rmse,
            "message": self.message,
            "v_x_ref": self.v_x_ref,
            "history": hist,
        }


@dataclass(frozen=True)
class IdentifyConfig:
    n_iter: int = 6
    train: TrainConfig = field(default_factory=TrainConfig)
    n_starts: int = N_STARTS
    divergence_factor: float = 10.0
    early_stop: float | None = None


def iterate(train_ds: RawDataset, veh: VehicleParams, tires_init: PacejkaParams,
            cfg: IdentifyConfig = IdentifyConfig(), test_ds: RawDataset | None = None,
            tires_true: PacejkaParams | None = None, keep_nets=False) -> IdentificationReport:
    """Alternate residual learning and Magic Formula refits ``cfg.n_iter`` times.

    ``train_ds`` should already be filtered and mirrored. The network is
    re-initialised every iteration (seed ``cfg.train.seed + i``). When
    ``test_ds`` is given each iteration records its one-step RMSE; with
    ``tires_true`` it also records the curve gap to the truth.
    """
    if cfg.n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    v_x_ref = float(np.mean(train_ds.v_x))
    limits = (cfg.divergence_factor * np.max(np.abs(train_ds.v_y)),
              cfg.divergence_factor * np.max(np.abs(train_ds.omega)))
    report = IdentificationReport(tires_init, v_x_ref=v_x_ref)
    report.init_train_rmse = float(np.mean(one_step_rmse(tires_init, veh, train_ds)))
    tires = tires_init
    for i in range(cfg.n_iter):
        t0 = time.perf_counter()
        targets = build_error_targets(train_ds, veh, tires)
        net, trace = ResidualNet.fit(targets.inputs, targets.targets,
                                     replace(cfg.train, seed=cfg.train.seed + i))
        cm = CorrectedModel(tires, veh, net, train_ds.T_s)
        try:
            vd = generate_virtual_data(cm, v_x_ref, state_limits=limits)
        except DivergenceError as exc:
            report.diverged = True
            report.message = f"iteration {i + 1}: {exc}"
            log.warning(report.message)
            break
        points = extract_force_points(vd, veh)
        new = fit_axles(points, tires, cfg.n_starts, seed=cfg.train.seed + i)
        res_f = float(np.sqrt(np.mean((pacejka_force(points.alpha_f, new.front) - points.F_f) ** 2)))
        res_r = float(np.sqrt(np.mean((pacejka_force(points.alpha_r, new.rear) - points.F_r) ** 2)))
        rec = IterationRecord(i + 1, new, float(trace[-1]), res_f, res_r,
                              train_rmse=float(np.mean(one_step_rmse(new, veh, train_ds))))
        if test_ds is not None:
            rec.rmse_vy, rec.rmse_omega = one_step_rmse(new, veh, test_ds)
        if tires_true is not None:
            rec.curve_rms_front, rec.curve_rms_rear = curve_rms(new, tires_true)
        rec.seconds = time.perf_counter() - t0
        report.history.append(rec)
        if keep_nets:
            report.nets.append(net)
        change = max(curve_rms(new, tires, relative_to="rms"))
        tires = new
        if cfg.early_stop is not None and change < cfg.early_stop:
            report.message = f"converged after {i + 1} iterations"
            break
    return report
