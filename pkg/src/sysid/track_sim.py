"""Closed-loop data generation: Pure Pursuit driving a single-track vehicle.

The controller only knows the wheelbase, so the logs it produces are a
model-free starting point for identification. Measurement noise is added
afterwards with :func:`inject_noise`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import RawDataset
from .errors import ConfigError, DivergenceError
from .vehicle_model import (
    ControlInput,
    LateralState,
    PacejkaParams,
    Pose,
    VehicleParams,
    euler_step,
    wrap_angle,
)

TRACK_HEADER = ("x_m", "y_m", "v_target_mps")
MAX_STEER = 0.4


@dataclass
class Track:
    xy: np.ndarray
    v_target: np.ndarray
    closed: bool = True

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=float)
        self.v_target = np.asarray(self.v_target, dtype=float)
        if self.xy.ndim != 2 or self.xy.shape[1] != 2 or len(self.xy) < 4:
            raise ConfigError("track needs at least 4 (x, y) waypoints")
        if len(self.v_target) != len(self.xy):
            raise ConfigError("one target speed per waypoint is required")
        if not np.all(np.isfinite(self.xy)) or not np.all(np.isfinite(self.v_target)):
            raise ConfigError("track contains non-finite values")
        if np.any(self.v_target <= 0):
            raise ConfigError("target speeds must be > 0")
        if np.any(np.linalg.norm(self._segments(), axis=1) == 0):
            raise ConfigError("consecutive waypoints coincide")
        seg = self._segments()
        self._seg_len = np.linalg.norm(seg, axis=1)
        self._s = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    def _segments(self):
        nxt = np.roll(self.xy, -1, axis=0) if self.closed else self.xy[1:]
        return nxt - self.xy[: len(nxt)]

    def __len__(self):
        return len(self.xy)

    @property
    def length(self) -> float:
        return float(self._s[-1])

    @property
    def n_segments(self) -> int:
        return len(self._seg_len)

    def segment(self, i):
        """Endpoints of segment ``i`` (wrapped on closed tracks)."""
        a = self.xy[i % len(self.xy)]
        b = self.xy[(i + 1) % len(self.xy)]
        return a, b

    def project(self, p, hint=None, window=None):
        """Closest point on the polyline to ``p``.

        Returns ``(arc_length, segment_index, distance)``. With ``hint`` the
        search is restricted to ``window`` segments ahead of and behind the
        hinted segment, which keeps the projection from jumping between
        nearby parts of a self-approaching track.
        """
        p = np.asarray(p, dtype=float)
        n = self.n_segments
        if hint is None or window is None or window >= n:
            idx = np.arange(n)
        else:
            idx = np.arange(hint - window, hint + window + 1)
            idx = idx % n if self.closed else idx[(idx >= 0) & (idx < n)]
        a = self.xy[idx]
        b = self.xy[(idx + 1) % len(self.xy)]
        ab = b - a
        u = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
        proj = a + u[:, None] * ab
        d = np.linalg.norm(proj - p, axis=1)
        j = int(np.argmin(d))
        seg = int(idx[j])
        return self._s[seg] + u[j] * self._seg_len[seg], seg, float(d[j])

    def point_at(self, s):
        """Point at arc length ``s``; open tracks extend their end segments linearly."""
        if self.closed:
            s = np.mod(s, self.length)
        seg = int(np.clip(np.searchsorted(self._s, s, side="right") - 1, 0, self.n_segments - 1))
        a, b = self.segment(seg)
        u = (s - self._s[seg]) / self._seg_len[seg]
        return a + u * (b - a)

    def speed_at(self, s):
        if self.closed:
            s = np.mod(s, self.length)
            v = np.append(self.v_target, self.v_target[0])
            return float(np.interp(s, self._s, v))
        return float(np.interp(s, self._s, self.v_target))

    def heading_at(self, s):
        if self.closed:
            s = np.mod(s, self.length)
        seg = int(np.clip(np.searchsorted(self._s, s, side="right") - 1, 0, self.n_segments - 1))
        a, b = self.segment(seg)
        return float(np.arctan2(b[1] - a[1], b[0] - a[0]))

    def bounds(self, margin=0.0):
        lo = self.xy.min(axis=0) - margin
        hi = self.xy.max(axis=0) + margin
        return lo, hi


def read_track_csv(path, closed=True) -> Track:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACK_HEADER:
            raise ConfigError(f"{path}:1: expected header {','.join(TRACK_HEADER)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ConfigError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise ConfigError(f"{path}: track has no waypoints")
    arr = np.array(rows)
    try:
        return Track(arr[:, :2], arr[:, 2], closed=closed)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def write_track_csv(track: Track, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACK_HEADER)
        for (x, y), v in zip(track.xy, track.v_target):
            writer.writerow([f"{x:.6f}", f"{y:.6f}", f"{v:.4f}"])


def bundled_track(name: str) -> Track:
    """Load one of the packaged tracks (``"oval"`` or ``"pinched"``)."""
    ref = resources.files("sysid") / "data" / f"track_{name}.csv"
    if not ref.is_file():
        raise ConfigError(f"no bundled track named {name!r}")
    with resources.as_file(ref) as p:
        return read_track_csv(p)


def pure_pursuit_steer(pose: Pose, track: Track, lookahead: float, wheelbase: float,
                       hint=None, window=None, max_steer=MAX_STEER) -> float:
    """Steering angle that arcs the vehicle through the lookahead point.

    The lookahead point is the track point ``lookahead`` metres of arc length
    past the vehicle's projection onto the track.
    """
    if track is None or len(track) == 0:
        raise ConfigError("empty track")
    if not lookahead > 0:
        raise ConfigError("lookahead must be > 0")
    s, _, _ = track.project((pose.X, pose.Y), hint=hint, window=window)
    target = track.point_at(s + lookahead)
    bearing = np.arctan2(target[1] - pose.Y, target[0] - pose.X) - pose.psi
    delta = np.arctan(2.0 * wheelbase * np.sin(bearing) / lookahead)
    return float(np.clip(delta, -max_steer, max_steer))


@dataclass(frozen=True)
class SimConfig:
    T_s: float = 0.02
    duration: float = 30.0
    lookahead: float = 1.0
    eta: float = 0.0
    seed: int = 0
    bbox_margin: float = 2.0
    start_offset: float = 0.0

    def __post_init__(self):
        if not self.T_s > 0:
            raise ConfigError("T_s must be > 0")
        if not self.duration >= self.T_s:
            raise ConfigError("duration must be >= T_s")
        if not self.eta >= 0:
            raise ConfigError("noise multiplier must be >= 0")
        if not self.lookahead > 0:
            raise ConfigError("lookahead must be > 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.T_s))


def simulate_run(track: Track, veh: VehicleParams, tires_gt: PacejkaParams,
                 cfg: SimConfig, return_poses=False):
    """Drive ``track`` with Pure Pursuit and log ``[v_x, v_y, omega, delta]``.

    The vehicle starts on the track at arc length ``cfg.start_offset``,
    aligned with it and with zero lateral motion. ``v_x`` follows the target
    speed profile exactly. Noise, if ``cfg.eta > 0``, is injected with
    ``cfg.seed``.
    """
    n = cfg.n_steps
    s0 = cfg.start_offset
    p0 = track.point_at(s0)
    X, Y, psi = float(p0[0]), float(p0[1]), track.heading_at(s0)
    state = LateralState(0.0, 0.0)
    lo, hi = track.bounds(cfg.bbox_margin)
    L = veh.wheelbase
    # Projection window: a few lookahead lengths of waypoints either side.
    spacing = track.length / track.n_segments
    window = max(4, int(np.ceil(3 * cfg.lookahead / spacing)))
    _, hint, _ = track.project((X, Y))

    log = np.empty((n, 4))
    poses = np.empty((n, 3))
    for k in range(n):
        if not (lo[0] <= X <= hi[0] and lo[1] <= Y <= hi[1]) or not np.isfinite(state).all():
            raise DivergenceError("vehicle left the bounding box", step=k)
        pose = Pose(X, Y, psi)
        s, hint, _ = track.project((X, Y), hint=hint, window=window)
        delta = pure_pursuit_steer(pose, track, cfg.lookahead, L, hint=hint, window=window)
        v_x = track.speed_at(s)
        log[k] = (v_x, state.v_y, state.omega, delta)
        poses[k] = (X, Y, pose.psi)

        cos_p, sin_p = np.cos(psi), np.sin(psi)
        X += (v_x * cos_p - state.v_y * sin_p) * cfg.T_s
        Y += (v_x * sin_p + state.v_y * cos_p) * cfg.T_s
        psi = wrap_angle(psi + state.omega * cfg.T_s)
        state = euler_step(state, ControlInput(v_x, delta), veh, tires_gt, cfg.T_s)

    t = np.arange(n) * cfg.T_s
    ds = RawDataset(t, log, cfg.T_s)
    if cfg.eta > 0:
        ds = inject_noise(ds, cfg.eta, cfg.seed)
    return (ds, poses) if return_poses else ds


def inject_noise(ds: RawDataset, eta: float, seed) -> RawDataset:
    """Add zero-mean Gaussian noise with per-channel std ``eta * mean(|channel|)``."""
    if not eta >= 0:
        raise ConfigError("noise multiplier must be >= 0")
    if eta == 0:
        return ds.copy()
    rng = np.random.default_rng(seed)
    sigma = np.mean(np.abs(ds.data), axis=0) * eta
    noisy = ds.data + rng.standard_normal(ds.data.shape) * sigma
    return RawDataset(ds.t.copy(), noisy, ds.T_s, ds.block.copy())


def make_oval(straight=7.8, radius=1.5, spacing=0.1, v_max=3.0, v_min=2.0, a_lat=5.0):
    """Stadium-shaped track: two straights joined by semicircles."""
    pts = []
    n_s = int(round(straight / spacing))
    n_c = int(round(np.pi * radius / spacing))
    for i in range(n_s):
        pts.append((-straight / 2 + i * straight / n_s, -radius))
    for i in range(n_c):
        th = -np.pi / 2 + i * np.pi / n_c
        pts.append((straight / 2 + radius * np.cos(th), radius * np.sin(th)))
    for i in range(n_s):
        pts.append((straight / 2 - i * straight / n_s, radius))
    for i in range(n_c):
        th = np.pi / 2 + i * np.pi / n_c
        pts.append((-straight / 2 + radius * np.cos(th), radius * np.sin(th)))
    xy = np.array(pts)
    return Track(xy, _speed_profile(xy, v_min, v_max, a_lat))


def make_pinched(r0=3.7, pinch=0.4, n=250, v_max=3.0, v_min=2.0, a_lat=5.0):
    """Peanut-shaped loop ``r = r0 (1 + pinch cos 2 theta)`` with concave waists."""
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    r = r0 * (1 + pinch * np.cos(2 * th))
    xy = np.column_stack([r * np.cos(th), r * np.sin(th)])
    return Track(xy, _speed_profile(xy, v_min, v_max, a_lat))


def _speed_profile(xy, v_min, v_max, a_lat):
    # Menger curvature through neighbouring waypoints, smoothed over a few points.
    a, b, c = np.roll(xy, 1, axis=0), xy, np.roll(xy, -1, axis=0)
    cross = np.abs((b - a)[:, 0] * (c - b)[:, 1] - (b - a)[:, 1] * (c - b)[:, 0])
    denom = (np.linalg.norm(b - a, axis=1) * np.linalg.norm(c - b, axis=1)
             * np.linalg.norm(c - a, axis=1))
    kappa = 2 * cross / denom
    kernel = np.ones(9) / 9
    kappa = np.convolve(np.concatenate([kappa[-4:], kappa, kappa[:4]]), kernel, mode="valid")
    v = np.sqrt(a_lat / np.maximum(kappa, 1e-9))
    return np.clip(v, v_min, v_max)
