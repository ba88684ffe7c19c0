"""Turning driving logs into residual-learning training pairs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .dataset import RawDataset
from .errors import DataError
from .vehicle_model import ControlInput, LateralState, PacejkaParams, VehicleParams, euler_step

log = logging.getLogger(__name__)

TRAINING_HEADER = ("v_x", "v_y", "omega", "delta", "e_vy", "e_omega")
FILTER_ORDER = 2
MIN_SPLIT_BLOCK = 50


@dataclass
class TrainingSet:
    """Network inputs ``[v_x, v_y, omega, delta]`` at step k and the nominal
    model's error ``[e_vy, e_omega]`` on the step ``k -> k+1``."""

    inputs: np.ndarray
    targets: np.ndarray
    T_s: float

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape[1] != 4 or self.targets.shape[1] != 2:
            raise DataError("inputs must be (N, 4) and targets (N, 2)")
        if len(self.inputs) != len(self.targets):
            raise DataError("inputs and targets differ in length")
        if not np.all(np.isfinite(self.targets)):
            raise DataError("non-finite error targets")

    def __len__(self):
        return len(self.inputs)


def settling_length(b, a, tol=1e-3, max_len=10_000):
    """Samples until the impulse response stays below ``tol`` of its peak."""
    imp = signal.lfilter(b, a, np.r_[1.0, np.zeros(max_len - 1)])
    above = np.flatnonzero(np.abs(imp) > tol * np.abs(imp).max())
    return int(above[-1]) + 1


def zero_phase_lowpass(series, cutoff_hz, T_s, order=FILTER_ORDER):
    """Butterworth low-pass run forward and backward, so no phase lag.

    Both ends are padded by odd reflection over one settling length of the
    filter before filtering.
    """
    series = np.asarray(series, dtype=float)
    nyquist = 0.5 / T_s
    if not 0 < cutoff_hz < nyquist:
        raise DataError(f"cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz")
    if series.shape[0] < 3 * order:
        raise DataError(f"series of {series.shape[0]} samples is too short to filter "
                        f"(need at least {3 * order})")
    b, a = signal.butter(order, cutoff_hz / nyquist)
    padlen = min(settling_length(b, a), series.shape[0] - 1)
    return signal.filtfilt(b, a, series, axis=0, padtype="odd", padlen=padlen)


def filter_dataset(ds: RawDataset, cutoff_hz=5.0) -> RawDataset:
    """Low-pass every channel, block by block."""
    out = ds.copy()
    for idx in ds.blocks():
        out.data[idx] = zero_phase_lowpass(ds.data[idx], cutoff_hz, ds.T_s)
    return out


def mirror_augment(ds: RawDataset) -> RawDataset:
    """Append a copy with ``v_y``, ``omega`` and ``delta`` negated.

    Mirrored blocks get fresh block ids so no transition straddles the seam.
    """
    mirrored = ds.data * np.array([1.0, -1.0, -1.0, -1.0])
    offset = ds.block.max() + 1 if len(ds) else 0
    return RawDataset(
        np.concatenate([ds.t, ds.t]),
        np.vstack([ds.data, mirrored]),
        ds.T_s,
        np.concatenate([ds.block, ds.block + offset]),
    )


def one_step_predictions(ds: RawDataset, veh: VehicleParams, tires: PacejkaParams):
    """Nominal one-step predictions on every valid transition.

    Returns ``(k_index, predicted_next, observed_next)``; samples whose ``v_x``
    is not positive are skipped.
    """
    k = np.flatnonzero(ds.pair_mask())
    k = k[(ds.v_x[k] > 0)]
    d = ds.data
    pred = euler_step(LateralState(d[k, 1], d[k, 2]), ControlInput(d[k, 0], d[k, 3]),
                      veh, tires, ds.T_s)
    return k, np.column_stack(pred), d[k + 1][:, 1:3]


def build_error_targets(ds: RawDataset, veh: VehicleParams, tires_nominal: PacejkaParams,
                        max_drop_fraction=0.1) -> TrainingSet:
    """Pair each sample with the nominal model's one-step error."""
    mask = ds.pair_mask()
    n_pairs = int(mask.sum())
    if n_pairs == 0:
        raise DataError("dataset has no consecutive sample pairs")
    k, pred, observed = one_step_predictions(ds, veh, tires_nominal)
    dropped = n_pairs - len(k)
    if dropped:
        log.info("dropped %d of %d samples with v_x <= 0", dropped, n_pairs)
    if dropped > max_drop_fraction * n_pairs:
        raise DataError(f"{dropped} of {n_pairs} samples have v_x <= 0 "
                        f"(more than {max_drop_fraction:.0%})")
    return TrainingSet(ds.data[k], observed - pred, ds.T_s)


def split(ds: RawDataset, fraction=0.5):
    """Contiguous train/test split at ``fraction`` of the samples."""
    if not 0 < fraction < 1:
        raise DataError("split fraction must lie in (0, 1)")
    cut = int(round(fraction * len(ds)))
    if min(cut, len(ds) - cut) < MIN_SPLIT_BLOCK:
        raise DataError(f"split leaves a block shorter than {MIN_SPLIT_BLOCK} samples")
    return ds.subset(slice(0, cut)), ds.subset(slice(cut, None))


def preprocess(ds: RawDataset, cutoff_hz=5.0, augment=True) -> RawDataset:
    """Filter, then optionally mirror: the standard path from log to training data."""
    out = filter_dataset(ds, cutoff_hz) if cutoff_hz else ds.copy()
    return mirror_augment(out) if augment else out


def write_training_csv(ts: TrainingSet, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAINING_HEADER)
        for row in np.hstack([ts.inputs, ts.targets]):
            writer.writerow([repr(float(v)) for v in row])


def read_training_csv(path, T_s) -> TrainingSet:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        header = tuple(h.strip() for h in fh.readline().split(","))
    if header != TRAINING_HEADER:
        raise DataError(f"{path}:1: expected header {','.join(TRAINING_HEADER)}")
    return TrainingSet(arr[:, :4], arr[:, 4:], T_s)
