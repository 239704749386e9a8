"""3-DoF single-track vehicle: Fiala tires, longitudinal load transfer, friction ellipse.

The same model serves as simulation plant (RK4) and, through the compiled
kernels in :mod:`racecoach._dynamics`, as the MPC prediction model.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from racecoach import _dynamics as dyn

PLANT_DT = 0.002


class SimulationFault(RuntimeError):
    """Non-finite plant state; carries the last valid state."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters ("LC-500-like" placeholders, SI units)."""

    m: float = 1935.0
    I_z: float = 3500.0
    a: float = 1.18
    b: float = 1.72
    h_cg: float = 0.52
    C_f: float = 200_000.0
    C_r: float = 240_000.0
    mu_f: float = 0.9
    mu_r: float = 0.9
    steering_ratio: float = 14.0
    g: float = 9.81
    delta_w_max: float = 7.0
    a_x_min: float = -7.0
    a_x_max: float = 3.5
    trail: float = 0.008
    u_x_stab: float = 0.5
    fx_cap: float = 0.98

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "a_x_min":
                if not val < 0:
                    raise ValueError("a_x_min must be negative")
                continue
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{f.name} must be positive, got {val}")
        for mu in (self.mu_f, self.mu_r):
            if not 0 < mu <= 2:
                raise ValueError(f"friction coefficient {mu} outside (0, 2]")
        if not 0 < self.fx_cap < 1:
            raise ValueError("fx_cap must lie in (0, 1)")

    @property
    def wheelbase(self) -> float:
        return self.a + self.b

    def as_array(self) -> np.ndarray:
        p = np.empty(dyn.N_PARAMS)
        p[dyn.P_M] = self.m
        p[dyn.P_IZ] = self.I_z
        p[dyn.P_A] = self.a
        p[dyn.P_B] = self.b
        p[dyn.P_H] = self.h_cg
        p[dyn.P_CF] = self.C_f
        p[dyn.P_CR] = self.C_r
        p[dyn.P_MUF] = self.mu_f
        p[dyn.P_MUR] = self.mu_r
        p[dyn.P_RATIO] = self.steering_ratio
        p[dyn.P_G] = self.g
        p[dyn.P_USTAB] = self.u_x_stab
        p[dyn.P_FXCAP] = self.fx_cap
        return p


def load_params(path) -> VehicleParams:
    """Read a flat ``key = value`` file; unknown keys are an error, missing keys keep defaults."""
    known = {f.name for f in fields(VehicleParams)}
    values = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected key=value")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{line_no}: unknown vehicle parameter {key!r}")
        values[key] = float(val)
    return VehicleParams(**values)


def save_params(params: VehicleParams, path) -> None:
    lines = [f"{k} = {v!r}" for k, v in asdict(params).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def default_params_path() -> Path:
    return Path(str(resources.files("racecoach") / "data" / "vehicle.txt"))


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    u_x: float = 0.0
    u_y: float = 0.0
    r: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.u_x, self.u_y, self.r])

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(*(float(v) for v in arr[:6]))

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x, self.y, self.psi, self.u_x, self.u_y, self.r))

    def mirrored(self) -> "VehicleState":
        """Reflection about the x axis."""
        return VehicleState(self.x, -self.y, -self.psi, self.u_x, -self.u_y, -self.r)


@dataclass(frozen=True)
class VehicleControls:
    delta_w: float = 0.0
    a_x_cmd: float = 0.0

    def clipped(self, params: VehicleParams) -> "VehicleControls":
        return VehicleControls(
            float(np.clip(self.delta_w, -params.delta_w_max, params.delta_w_max)),
            float(np.clip(self.a_x_cmd, params.a_x_min, params.a_x_max)),
        )


class TireForces(NamedTuple):
    F_yf: float
    F_yr: float
    F_xr: float
    saturation_f: float
    saturation_r: float
    F_xf: float
    F_zf: float
    F_zr: float


def _v(state: VehicleState, controls: VehicleControls, params: VehicleParams) -> np.ndarray:
    ux = state.u_x
    return np.array([state.psi, ux, state.u_y, state.r, controls.delta_w, controls.a_x_cmd])


def tire_forces(state: VehicleState, controls: VehicleControls, params: VehicleParams) -> TireForces:
    """Axle forces and saturation (demanded over available friction; > 1 means sliding)."""
    controls = controls.clipped(params)
    out = np.empty(8)
    jac = np.empty((8, 6))
    dyn.forces(_v(state, controls, params), params.as_array(), out, jac)
    return TireForces(
        F_yf=float(out[0]), F_yr=float(out[1]), F_xr=float(out[3]),
        saturation_f=math.sqrt(out[6]), saturation_r=math.sqrt(out[7]),
        F_xf=float(out[2]), F_zf=float(out[4]), F_zr=float(out[5]),
    )


def derivatives(state: VehicleState, controls: VehicleControls, params: VehicleParams) -> np.ndarray:
    """Time derivative of ``(x, y, psi, u_x, u_y, r)``."""
    controls = controls.clipped(params)
    f = np.empty(6)
    dyn.derivatives(_v(state, controls, params), params.as_array(), f,
                    np.empty((6, 6)), np.empty(8), np.empty((8, 6)))
    return f


def step_plant(state: VehicleState, controls: VehicleControls, params: VehicleParams,
               dt: float = PLANT_DT) -> VehicleState:
    """One RK4 plant step; raises SimulationFault on a non-finite result."""
    controls = controls.clipped(params)
    out = np.empty(6)
    dyn.rk4_step(state.as_array(), controls.delta_w, controls.a_x_cmd, params.as_array(), dt, out)
    if not np.all(np.isfinite(out)):
        raise SimulationFault("plant produced a non-finite state", last_state=state)
    return VehicleState.from_array(out)


def self_aligning_torque(state: VehicleState, controls: VehicleControls, params: VehicleParams) -> float:
    """Unfiltered road-alignment torque at the steering wheel, N*m."""
    return -params.trail * tire_forces(state, controls, params).F_yf / params.steering_ratio


class AligningTorqueFilter:
    """First-order low-pass (20 Hz by default) applied to the aligning torque."""

    def __init__(self, cutoff_hz: float = 20.0, initial: float = 0.0):
        self.cutoff_hz = cutoff_hz
        self.value = initial

    def update(self, raw: float, dt: float) -> float:
        tau = 1.0 / (2.0 * math.pi * self.cutoff_hz)
        self.value += dt / (tau + dt) * (raw - self.value)
        return self.value


def kinetic_energy(state: VehicleState, params: VehicleParams) -> float:
    return 0.5 * params.m * (state.u_x ** 2 + state.u_y ** 2) + 0.5 * params.I_z * state.r ** 2


def steady_state_cornering(u_x: float, kappa: float, params: VehicleParams):
    """Solve the steady cornering equations at speed ``u_x`` on radius ``1/kappa``.

    Returns ``(state, controls)`` with zero ``du_y/dt`` and ``dr/dt`` at zero
    longitudinal command.  Used for plausibility checks.
    """
    from scipy.optimize import fsolve

    r = u_x * kappa
    base = VehicleState(u_x=u_x, r=r)

    def residual(z):
        uy, dw = z
        f = derivatives(replace(base, u_y=uy), VehicleControls(dw, 0.0), params)
        return [f[4], f[5]]

    guess = [0.0, kappa * params.wheelbase * params.steering_ratio]
    uy, dw = fsolve(residual, guess, xtol=1e-13)
    return replace(base, u_y=float(uy)), VehicleControls(float(dw), 0.0)
