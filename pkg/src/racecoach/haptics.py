"""Steering torque generator and steering-wheel dynamics.

The shared-control torque is ``tau_sc = alpha*tau_pid + beta*tau_c + gamma*tau_ch``
with ``tau_ch = -tau_h``.  The wheel sees ``tau_sc + tau_h``; that sum is
formed as ``alpha*tau_pid + beta*tau_c + (1 - gamma)*tau_h`` so the
counter-torque cancels the driver exactly rather than up to rounding.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

HAPTIC_DT = 0.002

# parameter vector layout
H_KP, H_KI, H_KD, H_DTAU, H_TMAX, H_IFRAC, H_IW, H_BW, H_DMAX, H_SCMAX = range(10)
N_HPARAMS = 10
# PID state layout
S_INT, S_DF, S_PREV, S_PRIMED = range(4)

TRACE_COLUMNS = ("t", "tau_h", "tau_pid", "tau_c", "tau_ch", "tau_sc", "delta_w", "delta_ref")


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class AssistGains:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ContractError(f"{name} = {val} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return self.alpha, self.beta, self.gamma


@njit(cache=True)
def schedule(level):
    """Gain schedule ``(alpha, beta, gamma)`` for an assistance level in [0, 100]."""
    if level >= 60.0:
        gamma = (level - 60.0) / 40.0
        alpha = 1.0
    elif level >= 35.0:
        gamma = 0.0
        alpha = 0.4 + 0.6 * (level - 35.0) / 25.0
    else:
        gamma = 0.0
        alpha = 0.4 * level / 35.0
    beta = 0.0 if level >= 35.0 else 1.0 - level / 35.0
    return alpha, beta, gamma


def gains_for_level(level: float) -> AssistGains:
    level = float(level)
    if not 0.0 <= level <= 100.0:
        raise ContractError(f"assistance level {level} outside [0, 100]")
    return AssistGains(*schedule(level))


def stage_for_level(level: float) -> str:
    if level >= 60.0:
        return "high"
    if level >= 35.0:
        return "medium"
    return "low"


@dataclass(frozen=True)
class HapticParams:
    """PID gains and wheel constants (tuned for a 0.2 rad step: settles < 0.3 s)."""

    kp: float = 50.0
    ki: float = 15.0
    kd: float = 2.2
    derivative_cutoff_hz: float = 40.0
    tau_max: float = 10.0
    windup_fraction: float = 0.5
    inertia: float = 0.04
    damping: float = 0.25
    delta_max: float = 7.0
    tau_sc_max: float = 18.0

    def __post_init__(self):
        for name in ("kp", "ki", "kd", "derivative_cutoff_hz", "tau_max", "inertia",
                     "damping", "delta_max", "tau_sc_max"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ContractError(f"{name} must be a non-negative number")
        if not 0 < self.windup_fraction <= 1:
            raise ContractError("windup_fraction must lie in (0, 1]")
        if self.inertia <= 0:
            raise ContractError("inertia must be positive")

    def as_array(self) -> np.ndarray:
        hp = np.empty(N_HPARAMS)
        hp[H_KP] = self.kp
        hp[H_KI] = self.ki
        hp[H_KD] = self.kd
        hp[H_DTAU] = 1.0 / (2.0 * math.pi * self.derivative_cutoff_hz)
        hp[H_TMAX] = self.tau_max
        hp[H_IFRAC] = self.windup_fraction
        hp[H_IW] = self.inertia
        hp[H_BW] = self.damping
        hp[H_DMAX] = self.delta_max
        hp[H_SCMAX] = self.tau_sc_max
        return hp


@njit(cache=True)
def pid_update(err, st, hp, dt):
    """Advance the PID state by one step and return the saturated output."""
    if st[S_PRIMED] == 0.0:
        st[S_PREV] = err
        st[S_PRIMED] = 1.0
    ki = hp[H_KI]
    st[S_INT] += err * dt
    if ki > 0.0:
        lim = hp[H_IFRAC] * hp[H_TMAX] / ki
        if st[S_INT] > lim:
            st[S_INT] = lim
        elif st[S_INT] < -lim:
            st[S_INT] = -lim
    raw = (err - st[S_PREV]) / dt
    st[S_DF] += dt / (hp[H_DTAU] + dt) * (raw - st[S_DF])
    st[S_PREV] = err
    out = hp[H_KP] * err + ki * st[S_INT] + hp[H_KD] * st[S_DF]
    tmax = hp[H_TMAX]
    if out > tmax:
        return tmax
    if out < -tmax:
        return -tmax
    return out


@njit(cache=True)
def blend(alpha, beta, gamma, tau_pid, tau_c, tau_h, tau_sc_max):
    """Return ``(tau_sc, tau_wheel)``: assist torque and net torque on the wheel."""
    tau_sc = alpha * tau_pid + beta * tau_c - gamma * tau_h
    if tau_sc > tau_sc_max:
        return tau_sc_max, tau_sc_max + tau_h
    if tau_sc < -tau_sc_max:
        return -tau_sc_max, -tau_sc_max + tau_h
    return tau_sc, alpha * tau_pid + beta * tau_c + (1.0 - gamma) * tau_h


@njit(cache=True)
def wheel_update(w, tau, hp, dt):
    """Semi-implicit Euler on ``I*dd(delta) = tau - b*d(delta)`` with hard stops."""
    w[1] += dt * (tau - hp[H_BW] * w[1]) / hp[H_IW]
    w[0] += dt * w[1]
    lim = hp[H_DMAX]
    if w[0] > lim:
        w[0] = lim
        w[1] = 0.0
    elif w[0] < -lim:
        w[0] = -lim
        w[1] = 0.0


class PidState:
    """Integral, filtered derivative and previous error of the steering PID."""

    __slots__ = ("buf",)

    def __init__(self):
        self.buf = np.zeros(4)

    @property
    def integral(self) -> float:
        return float(self.buf[S_INT])

    @property
    def derivative(self) -> float:
        return float(self.buf[S_DF])

    def reset(self) -> None:
        self.buf[:] = 0.0

    def update(self, err: float, params: HapticParams, dt: float = HAPTIC_DT) -> float:
        return float(pid_update(float(err), self.buf, params.as_array(), dt))


@dataclass(frozen=True)
class WheelState:
    delta_w: float = 0.0
    delta_w_dot: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.delta_w) and math.isfinite(self.delta_w_dot)):
            raise ContractError("non-finite wheel state")


class TorqueSample(NamedTuple):
    tau_pid: float
    tau_c: float
    tau_ch: float
    tau_sc: float
    tau_wheel: float


DEFAULT_PARAMS = HapticParams()


def torque_components(tau_h: float, wheel: WheelState, delta_ref: float, tau_c: float,
                      gains: AssistGains, pid: PidState, dt: float = HAPTIC_DT,
                      params: HapticParams = DEFAULT_PARAMS) -> TorqueSample:
    tau_pid = pid.update(delta_ref - wheel.delta_w, params, dt)
    tau_sc, net = blend(gains.alpha, gains.beta, gains.gamma, tau_pid, float(tau_c),
                        float(tau_h), params.tau_sc_max)
    return TorqueSample(tau_pid, float(tau_c), -float(tau_h), float(tau_sc), float(net))


def torque_command(tau_h: float, wheel: WheelState, delta_ref: float, tau_c: float,
                   gains: AssistGains, pid: PidState, dt: float = HAPTIC_DT,
                   params: HapticParams = DEFAULT_PARAMS) -> float:
    """Shared-control torque; advances ``pid`` by one step."""
    return torque_components(tau_h, wheel, delta_ref, tau_c, gains, pid, dt, params).tau_sc


def step_wheel(wheel: WheelState, tau_total: float, dt: float = HAPTIC_DT,
               params: HapticParams = DEFAULT_PARAMS) -> WheelState:
    w = np.array([wheel.delta_w, wheel.delta_w_dot])
    wheel_update(w, float(tau_total), params.as_array(), dt)
    return WheelState(float(w[0]), float(w[1]))


def tracking_fidelity(reference, trace) -> float:
    """RMS of ``delta_w - delta_w_ref`` over a run."""
    ref = np.asarray(reference, dtype=float)
    act = np.asarray(trace, dtype=float)
    if ref.shape != act.shape:
        raise ContractError("reference and trace lengths differ")
    if ref.size == 0:
        raise ContractError("empty wheel trace")
    return float(np.sqrt(np.mean((act - ref) ** 2)))


def step_response(step: float = 0.2, duration: float = 1.0,
                  params: HapticParams = DEFAULT_PARAMS, dt: float = HAPTIC_DT) -> np.ndarray:
    """Wheel angle under full-authority PID after a reference step at t = 0."""
    pid = PidState()
    hp = params.as_array()
    w = np.zeros(2)
    out = np.empty(int(round(duration / dt)) + 1)
    out[0] = 0.0
    for i in range(1, out.size):
        tau = pid_update(step - w[0], pid.buf, hp, dt)
        wheel_update(w, tau, hp, dt)
        out[i] = w[0]
    return out


def write_torque_trace(path, rows) -> None:
    """CSV with one row per logged haptics step (``rows``: iterable of 8-tuples or 2-D array)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
