"""Driving-log container and its CSV format."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

RAW_HEADER = ("t_s", "v_x_mps", "v_y_mps", "omega_radps", "delta_rad")
CHANNELS = ("v_x", "v_y", "omega", "delta")


@dataclass
class RawDataset:
    """Uniformly sampled log of ``[v_x, v_y, omega, delta]``.

    ``block`` labels contiguous recordings. Consecutive samples only form a
    transition ``k -> k+1`` when they share a block id, which keeps mirrored
    or concatenated copies from being paired across their seams.
    """

    t: np.ndarray
    data: np.ndarray
    T_s: float
    block: np.ndarray = field(default=None)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != 4:
            raise DataError(f"data must have shape (N, 4), got {self.data.shape}")
        if len(self.t) != len(self.data):
            raise DataError("t and data lengths differ")
        if self.block is None:
            self.block = np.zeros(len(self.t), dtype=int)
        self.block = np.asarray(self.block, dtype=int)
        if not self.T_s > 0:
            raise DataError("T_s must be > 0")

    def __len__(self):
        return len(self.t)

    @property
    def v_x(self):
        return self.data[:, 0]

    @property
    def v_y(self):
        return self.data[:, 1]

    @property
    def omega(self):
        return self.data[:, 2]

    @property
    def delta(self):
        return self.data[:, 3]

    def pair_mask(self) -> np.ndarray:
        """Boolean mask over ``k = 0..N-2`` selecting valid ``k -> k+1`` transitions."""
        return self.block[:-1] == self.block[1:]

    def blocks(self):
        """Yield index arrays of each contiguous block, in order of appearance."""
        if len(self) == 0:
            return
        cuts = np.flatnonzero(np.diff(self.block) != 0) + 1
        yield from np.split(np.arange(len(self)), cuts)

    def validate(self):
        if not np.all(np.isfinite(self.data)) or not np.all(np.isfinite(self.t)):
            raise DataError("dataset contains non-finite values")
        for idx in self.blocks():
            dt = np.diff(self.t[idx])
            if len(dt) and (np.any(dt <= 0) or not np.allclose(dt, self.T_s, rtol=1e-6, atol=1e-9)):
                raise DataError(f"time stamps are not uniformly spaced at T_s={self.T_s}")
        return self

    def subset(self, idx) -> "RawDataset":
        return RawDataset(self.t[idx], self.data[idx], self.T_s, self.block[idx])

    def copy(self) -> "RawDataset":
        return RawDataset(self.t.copy(), self.data.copy(), self.T_s, self.block.copy())


def write_raw_csv(ds: RawDataset, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RAW_HEADER)
        for t, row in zip(ds.t, ds.data):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_raw_csv(path, T_s=None) -> RawDataset:
    """Read a log written by :func:`write_raw_csv`.

    ``T_s`` defaults to the median spacing of the time column, rounded to 12
    significant digits so that ``0.02`` survives the round trip.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != RAW_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(RAW_HEADER)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
            if len(row) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two samples")
    arr = np.array(rows)
    if T_s is None:
        T_s = float(f"{np.median(np.diff(arr[:, 0])):.12g}")
    return RawDataset(arr[:, 0], arr[:, 1:], T_s).validate()
