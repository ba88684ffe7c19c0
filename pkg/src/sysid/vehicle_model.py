"""Dynamic single-track (bicycle) model with Pacejka lateral tires.

Only the lateral dynamics are modelled: the state is ``[v_y, omega]`` and the
input ``[v_x, delta]``. Longitudinal dynamics and load transfer are ignored.

All functions accept scalars or equally shaped numpy arrays, so the same
code path serves single steps and whole-dataset evaluation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import DomainError

TIRE_KEYS = ("B_f", "C_f", "D_f", "E_f", "B_r", "C_r", "D_r", "E_r")
VEHICLE_KEYS = ("m", "I_z", "l_f", "l_r")


@dataclass(frozen=True)
class VehicleParams:
    m: float
    I_z: float
    l_f: float
    l_r: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value) or value <= 0:
                raise DomainError(f.name, f"must be finite and > 0, got {value!r}")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AxleTire:
    """Magic Formula coefficients for one axle."""

    B: float
    C: float
    D: float
    E: float

    def __post_init__(self):
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                raise DomainError(f.name, "must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.B, self.C, self.D, self.E])

    def force(self, alpha):
        return pacejka_force(alpha, self)


@dataclass(frozen=True)
class PacejkaParams:
    front: AxleTire
    rear: AxleTire

    def as_array(self) -> np.ndarray:
        """Flat ``[B_f, C_f, D_f, E_f, B_r, C_r, D_r, E_r]`` vector."""
        return np.concatenate([self.front.as_array(), self.rear.as_array()])

    @classmethod
    def from_array(cls, values) -> "PacejkaParams":
        v = [float(x) for x in np.asarray(values, dtype=float).ravel()]
        if len(v) != 8:
            raise ValueError(f"expected 8 tire coefficients, got {len(v)}")
        return cls(AxleTire(*v[:4]), AxleTire(*v[4:]))

    def to_dict(self) -> dict:
        return dict(zip(TIRE_KEYS, self.as_array().tolist()))

    @classmethod
    def from_dict(cls, d) -> "PacejkaParams":
        missing = [k for k in TIRE_KEYS if k not in d]
        if missing:
            raise KeyError(f"missing tire keys: {', '.join(missing)}")
        return cls.from_array([float(d[k]) for k in TIRE_KEYS])


class LateralState(NamedTuple):
    v_y: float
    omega: float


class ControlInput(NamedTuple):
    v_x: float
    delta: float


@dataclass(frozen=True)
class Pose:
    X: float
    Y: float
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "psi", wrap_angle(self.psi))


def wrap_angle(angle):
    """Map an angle to (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def _check_state(state):
    for name, value in zip(LateralState._fields, state):
        if not np.all(np.isfinite(value)):
            raise DomainError(name, "non-finite value")


def _check_input(u, steer_limit=True):
    v_x, delta = u
    if not np.all(np.isfinite(v_x)) or np.any(np.asarray(v_x) <= 0):
        raise DomainError("v_x", "longitudinal velocity must be finite and > 0")
    if not np.all(np.isfinite(delta)):
        raise DomainError("delta", "non-finite value")
    if steer_limit and np.any(np.abs(delta) >= np.pi / 2):
        raise DomainError("delta", "|delta| must be < pi/2")


def slip_angles(state: LateralState, u: ControlInput, veh: VehicleParams):
    """Front and rear slip angles in rad."""
    _check_state(state)
    _check_input(u, steer_limit=False)
    v_y, omega = state
    v_x, delta = u
    alpha_f = delta - np.arctan((v_y + veh.l_f * omega) / v_x)
    alpha_r = -np.arctan((v_y - veh.l_r * omega) / v_x)
    return alpha_f, alpha_r


def pacejka_force(alpha, tire: AxleTire):
    """Magic Formula lateral force ``D sin(C atan(B a - E (B a - atan(B a))))``."""
    ba = tire.B * np.asarray(alpha, dtype=float)
    out = tire.D * np.sin(tire.C * np.arctan(ba - tire.E * (ba - np.arctan(ba))))
    return float(out) if np.ndim(out) == 0 else out


def lateral_derivatives(state: LateralState, u: ControlInput, veh: VehicleParams,
                        tires: PacejkaParams):
    """Continuous-time ``(dv_y/dt, domega/dt)``."""
    _check_input(u)
    alpha_f, alpha_r = slip_angles(state, u, veh)
    F_yf = pacejka_force(alpha_f, tires.front)
    F_yr = pacejka_force(alpha_r, tires.rear)
    v_x, delta = u
    cos_d = np.cos(delta)
    dv_y = (F_yr + F_yf * cos_d - veh.m * v_x * state[1]) / veh.m
    domega = (F_yf * veh.l_f * cos_d - F_yr * veh.l_r) / veh.I_z
    return dv_y, domega


def euler_step(state: LateralState, u: ControlInput, veh: VehicleParams,
               tires: PacejkaParams, T_s: float) -> LateralState:
    """One forward-Euler step of length ``T_s``."""
    if not T_s > 0:
        raise DomainError("T_s", "sampling time must be > 0")
    dv_y, domega = lateral_derivatives(state, u, veh, tires)
    return LateralState(state[0] + dv_y * T_s, state[1] + domega * T_s)


def rollout(state0: LateralState, inputs, veh, tires, T_s):
    """Iterate :func:`euler_step` over an ``(N, 2)`` array of ``[v_x, delta]``.

    Returns an ``(N + 1, 2)`` array of states including ``state0``.
    """
    inputs = np.asarray(inputs, dtype=float)
    out = np.empty((len(inputs) + 1, 2))
    out[0] = state0
    x = LateralState(*map(float, state0))
    for k, (v_x, delta) in enumerate(inputs):
        x = euler_step(x, ControlInput(v_x, delta), veh, tires, T_s)
        out[k + 1] = x
    return out


def steady_state_forces(u: ControlInput, omega, veh: VehicleParams):
    """Axle forces ``(F_yr, F_yf)`` implied by steady cornering at yaw rate ``omega``.

    Setting both state derivatives to zero in the lateral equations of motion
    and solving for the two forces.
    """
    _check_input(u)
    v_x, delta = u
    L = veh.wheelbase
    centripetal = veh.m * v_x * np.asarray(omega, dtype=float)
    F_yr = veh.l_f / L * centripetal
    F_yf = veh.l_r / L * centripetal / np.cos(delta)
    if np.ndim(F_yr) == 0:
        return float(F_yr), float(F_yf)
    return F_yr, F_yf
