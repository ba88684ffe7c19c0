"""INI experiment configuration.

Six sections: ``vehicle``, ``tires_gt``, ``tires_init``, ``sim``, ``train``
and ``solver``. Vehicle and tire sections use flat keys (``m``, ``I_z``,
``B_f`` ... ``E_r``). ``tires_init`` may instead hold ``generic_mu`` to ask
for the generic no-prior-knowledge curve, or ``from_report`` to start from
the final parameters of an earlier identification report.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

from .errors import ConfigError, DomainError
from .residual_net import TrainConfig
from .track_sim import SimConfig, Track, bundled_track, read_track_csv
from .vehicle_model import TIRE_KEYS, VEHICLE_KEYS, AxleTire, PacejkaParams, VehicleParams

SECTIONS = ("vehicle", "tires_gt", "tires_init", "sim", "train", "solver")
GRAVITY = 9.81
DEFAULT_ETAS = tuple(round(0.2 * i, 1) for i in range(8))


def generic_tires(veh: VehicleParams, mu=0.8) -> PacejkaParams:
    """B=5, C=1.5, E=0 and D set to each axle's static share of ``mu m g``."""
    L = veh.wheelbase
    d_f = mu * veh.m * GRAVITY * veh.l_r / L
    d_r = mu * veh.m * GRAVITY * veh.l_f / L
    return PacejkaParams(AxleTire(5.0, 1.5, d_f, 0.0), AxleTire(5.0, 1.5, d_r, 0.0))


@dataclass(frozen=True)
class SolverConfig:
    n_iter: int = 6
    n_starts: int = 5
    cutoff_hz: float = 5.0
    augment: bool = True
    divergence_factor: float = 10.0
    early_stop: float | None = None
    nls_weights: tuple = (1.0, 1.0)
    etas: tuple = DEFAULT_ETAS
    n_seeds: int = 10
    max_failure_fraction: float = 0.3


@dataclass(frozen=True)
class ExperimentConfig:
    vehicle: VehicleParams
    tires_gt: PacejkaParams
    tires_init: PacejkaParams
    sim: SimConfig
    train: TrainConfig
    solver: SolverConfig
    track: str = "oval"
    test_offset: float = 7.0
    train_csv: str | None = None
    test_csv: str | None = None
    source: str | None = None
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    @property
    def seed(self) -> int:
        return self.sim.seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, sim=replace(self.sim, seed=seed), train=replace(self.train, seed=seed))

    def with_eta(self, eta: float) -> "ExperimentConfig":
        return replace(self, sim=replace(self.sim, eta=eta))

    def with_iters(self, n_iter: int) -> "ExperimentConfig":
        return replace(self, solver=replace(self.solver, n_iter=n_iter))

    def load_track(self) -> Track:
        path = self.resolve(self.track)
        if path is not None and path.suffix == ".csv":
            return read_track_csv(path)
        return bundled_track(self.track)

    def resolve(self, name) -> Path | None:
        if name is None:
            return None
        p = Path(name)
        if p.suffix == "":
            return None
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        """Plain-data echo of every setting, embedded in reports for provenance."""
        solver = asdict(self.solver)
        solver["nls_weights"] = list(self.solver.nls_weights)
        solver["etas"] = list(self.solver.etas)
        return {
            "vehicle": self.vehicle.to_dict(),
            "tires_gt": self.tires_gt.to_dict(),
            "tires_init": self.tires_init.to_dict(),
            "sim": {**asdict(self.sim), "track": self.track, "test_offset": self.test_offset,
                    "train_csv": self.train_csv, "test_csv": self.test_csv},
            "train": asdict(self.train),
            "solver": solver,
        }


def _float(sec, key, default=None):
    if key not in sec:
        if default is None:
            raise ConfigError(f"[{sec.name}] missing key {key!r}")
        return default
    try:
        return float(sec[key])
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key} = {sec[key]!r} is not a number") from None


def _int(sec, key, default):
    if key not in sec:
        return default
    try:
        return int(sec[key])
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key} = {sec[key]!r} is not an integer") from None


def _floats(sec, key, default):
    if key not in sec:
        return default
    try:
        return tuple(float(v) for v in sec[key].replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key} must be a list of numbers") from None


def _tires(sec) -> PacejkaParams:
    try:
        return PacejkaParams.from_dict({k: _float(sec, k) for k in TIRE_KEYS})
    except (DomainError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[{sec.name}] {exc}") from None


def _init_tires(sec, veh, base_dir) -> PacejkaParams:
    if "from_report" in sec:
        path = Path(sec["from_report"])
        path = path if path.is_absolute() else base_dir / path
        try:
            report = json.loads(path.read_text())
            return PacejkaParams.from_dict(report["tires_final"])
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"[tires_init] cannot read final tires from {path}: {exc}") from None
    if any(k in sec for k in TIRE_KEYS):
        return _tires(sec)
    return generic_tires(veh, _float(sec, "generic_mu", 0.8))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys such as I_z and B_f are case-sensitive
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(parser, source=str(path), base_dir=path.parent)


def parse_config(parser: configparser.ConfigParser, source=None, base_dir=None) -> ExperimentConfig:
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for name in ("vehicle", "tires_gt"):
        if not parser.has_section(name):
            raise ConfigError(f"missing section [{name}]")
    for name in SECTIONS:
        if not parser.has_section(name):
            parser.add_section(name)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    vs = parser["vehicle"]
    try:
        veh = VehicleParams(**{k: _float(vs, k) for k in VEHICLE_KEYS})
    except DomainError as exc:
        raise ConfigError(f"[vehicle] {exc}") from None

    s = parser["sim"]
    try:
        sim = SimConfig(T_s=_float(s, "T_s", 0.02), duration=_float(s, "duration", 30.0),
                        lookahead=_float(s, "lookahead", 1.0), eta=_float(s, "eta", 0.0),
                        seed=_int(s, "seed", 0), bbox_margin=_float(s, "bbox_margin", 2.0))
        t = parser["train"]
        train = TrainConfig(learning_rate=_float(t, "learning_rate", 5e-4),
                            epochs=_int(t, "epochs", 1000),
                            leaky_slope=_float(t, "leaky_slope", 0.01), seed=sim.seed)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None

    so = parser["solver"]
    early = so.get("early_stop", "").strip()
    weights = _floats(so, "nls_weights", (1.0, 1.0))
    solver = SolverConfig(
        n_iter=_int(so, "n_iter", 6), n_starts=_int(so, "n_starts", 5),
        cutoff_hz=_float(so, "cutoff_hz", 5.0),
        augment=so.getboolean("augment", True),
        divergence_factor=_float(so, "divergence_factor", 10.0),
        early_stop=float(early) if early and early.lower() != "none" else None,
        nls_weights=weights, etas=_floats(so, "etas", DEFAULT_ETAS),
        n_seeds=_int(so, "n_seeds", 10),
        max_failure_fraction=_float(so, "max_failure_fraction", 0.3))
    if solver.n_iter < 1 or solver.n_starts < 1 or solver.n_seeds < 1:
        raise ConfigError("[solver] n_iter, n_starts and n_seeds must be >= 1")
    if len(weights) != 2 or not solver.etas or any(e < 0 for e in solver.etas):
        raise ConfigError("[solver] nls_weights needs two values and etas must be non-negative")

    return ExperimentConfig(
        vehicle=veh, tires_gt=_tires(parser["tires_gt"]),
        tires_init=_init_tires(parser["tires_init"], veh, base_dir),
        sim=sim, train=train, solver=solver,
        track=s.get("track", "oval"), test_offset=_float(s, "test_offset", 7.0),
        train_csv=s.get("train_csv"), test_csv=s.get("test_csv"),
        source=source, base_dir=base_dir)


def bundled_config_path(name="default") -> Path:
    """Filesystem path of a packaged example config (``default``, ``hard``, ``soft``, ``adaptation``)."""
    ref = resources.files("sysid") / "data" / f"{name}.ini"
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(ref))

