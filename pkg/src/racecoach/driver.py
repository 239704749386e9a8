"""Synthetic human driver (stand-in for real subjects; all parameters are synthetic).

Steering intention comes from a two-point preview law: a far point ahead on
the (apex-biased) target line sets a pure-pursuit angle and a near point adds
lateral correction.  The intention passes through a reaction delay together
with low-pass noise scaled by ``1 - skill``; a neuromuscular spring-damper
turns it into wheel torque.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from numba import njit

from racecoach.track import TrackModel, project_climb

TAU_H_MAX = 8.0

# parameter vector layout
D_SKILL, D_PREVIEW, D_NEAR, D_KNM, D_BNM, D_SIGMA, D_NTAU, D_COMPLY, D_APEX, D_KNEAR, D_WB, D_RATIO, D_KYAW = range(13)
N_DPARAMS = 13
# state vector layout
DS_NOISE, DS_POS, DS_HINT, DS_FILLED = range(4)


@dataclass(frozen=True)
class DriverParams:
    """Synthetic driver; ``noise_sigma`` is a wheel angle (rad) scaled by ``1 - skill``."""

    skill: float = 0.5
    preview_time: float = 0.8
    near_time: float = 0.3
    stiffness: float = 30.0
    damping: float = 1.3
    noise_sigma: float = 0.5
    noise_cutoff_hz: float = 0.8
    reaction_delay: float = 0.15
    learning_rate: float = 0.08
    compliance: float = 0.3
    apex_bias: float = 0.4
    near_gain: float = 0.0
    yaw_damping: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "seed":
                if int(val) != val or val < 0:
                    raise ValueError("seed must be a non-negative integer")
                continue
            if not (math.isfinite(val) and val >= 0):
                raise ValueError(f"{f.name} must be non-negative, got {val}")
        for name in ("skill", "compliance", "apex_bias"):
            if getattr(self, name) > 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.noise_cutoff_hz <= 0:
            raise ValueError("noise_cutoff_hz must be positive")

    def as_array(self, wheelbase: float, steering_ratio: float) -> np.ndarray:
        dp = np.empty(N_DPARAMS)
        dp[D_SKILL] = self.skill
        dp[D_PREVIEW] = self.preview_time
        dp[D_NEAR] = self.near_time
        dp[D_KNM] = self.stiffness
        dp[D_BNM] = self.damping
        dp[D_SIGMA] = self.noise_sigma * (1.0 - self.skill)
        dp[D_NTAU] = 1.0 / (2.0 * math.pi * self.noise_cutoff_hz)
        dp[D_COMPLY] = self.compliance
        dp[D_APEX] = self.apex_bias * self.skill
        dp[D_KNEAR] = self.near_gain
        dp[D_WB] = wheelbase
        dp[D_RATIO] = steering_ratio
        dp[D_KYAW] = self.yaw_damping * self.skill
        return dp

    def delay_steps(self, dt: float) -> int:
        return int(round(self.reaction_delay / dt))


@njit(cache=True)
def _centerline(s, closed, ts, xs, ys, kappa, wl, wr):
    """Centerline point, heading, curvature and half widths at station ``s``."""
    length = ts[-1]
    if closed:
        s = s % length
    elif s > length:
        s = length
    elif s < 0.0:
        s = 0.0
    i = np.searchsorted(ts, s, side="right") - 1
    if i >= ts.size - 1:
        i = ts.size - 2
    if i < 0:
        i = 0
    u = (s - ts[i]) / (ts[i + 1] - ts[i])
    x = xs[i] + u * (xs[i + 1] - xs[i])
    y = ys[i] + u * (ys[i + 1] - ys[i])
    h = math.atan2(ys[i + 1] - ys[i], xs[i + 1] - xs[i])
    k = kappa[i] + u * (kappa[i + 1] - kappa[i])
    left = wl[i] + u * (wl[i + 1] - wl[i])
    right = wr[i] + u * (wr[i + 1] - wr[i])
    return x, y, h, k, left, right


@njit(cache=True)
def _target_point(s, closed, ts, xs, ys, kappa, wl, wr, apex):
    x, y, h, k, left, right = _centerline(s, closed, ts, xs, ys, kappa, wl, wr)
    # inside of a left turn (k > 0) is positive e
    bend = k / 0.05
    if bend > 1.0:
        bend = 1.0
    elif bend < -1.0:
        bend = -1.0
    e = apex * bend * (left if bend > 0.0 else right)
    return x - e * math.sin(h), y + e * math.cos(h)


@njit(cache=True)
def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@njit(cache=True)
def intention(state, station, dp, closed, ts, xs, ys, kappa, wl, wr):
    """Desired wheel angle from the two-point preview law."""
    px = state[0]
    py = state[1]
    psi = state[2]
    ux = state[3] if state[3] > 1.0 else 1.0
    far = dp[D_PREVIEW] * ux
    if far < 6.0:
        far = 6.0
    near = dp[D_NEAR] * ux
    if near < 2.0:
        near = 2.0
    fx, fy = _target_point(station + far, closed, ts, xs, ys, kappa, wl, wr, dp[D_APEX])
    nx, ny = _target_point(station + near, closed, ts, xs, ys, kappa, wl, wr, dp[D_APEX])
    af = _wrap(math.atan2(fy - py, fx - px) - psi)
    dist = math.hypot(fx - px, fy - py)
    if dist < 1.0:
        dist = 1.0
    an = _wrap(math.atan2(ny - py, nx - px) - psi)
    road = math.atan(2.0 * dp[D_WB] * math.sin(af) / dist) + dp[D_KNEAR] * (an - af)
    # damp yaw rate in excess of what the path ahead needs
    k_path = _centerline(station + near, closed, ts, xs, ys, kappa, wl, wr)[3]
    road += dp[D_KYAW] * (ux * k_path - state[5])
    return dp[D_RATIO] * road


@njit(cache=True)
def driver_step(state, station, wheel, dp, dstate, ring, w, tau_assist, dt,
                closed, ts, xs, ys, kappa, wl, wr):
    """One 500 Hz driver update; returns ``(tau_h, delta_cmd)``.

    ``w`` is a standard-normal sample driving the steering noise and
    ``tau_assist`` the assist torque felt on the previous step.
    """
    desired = intention(state, station, dp, closed, ts, xs, ys, kappa, wl, wr)
    sigma = dp[D_SIGMA]
    if sigma > 0.0:
        a = dt / (dp[D_NTAU] + dt)
        dstate[DS_NOISE] += a * (sigma * math.sqrt((2.0 - a) / a) * w - dstate[DS_NOISE])
    desired += dstate[DS_NOISE]
    n = ring.size
    if n > 1:
        pos = int(dstate[DS_POS])
        if dstate[DS_FILLED] == 0.0:
            for j in range(n):
                ring[j] = desired
            dstate[DS_FILLED] = 1.0
        ring[pos] = desired
        pos = (pos + 1) % n
        dstate[DS_POS] = pos
        cmd = ring[pos]
    else:
        cmd = desired
    tau = dp[D_KNM] * (cmd - wheel[0]) - dp[D_BNM] * wheel[1]
    if tau * tau_assist < 0.0:
        tau *= 1.0 - dp[D_COMPLY]
    if tau > TAU_H_MAX:
        tau = TAU_H_MAX
    elif tau < -TAU_H_MAX:
        tau = -TAU_H_MAX
    return tau, cmd


class Driver:
    """Run-local driver instance: parameters, seeded noise stream and delay line."""

    def __init__(self, params: DriverParams, track: TrackModel, wheelbase: float,
                 steering_ratio: float, dt: float, seed: int | None = None):
        self.params = params
        self.track = track
        self.dt = dt
        self.dp = params.as_array(wheelbase, steering_ratio)
        self.rng = np.random.default_rng(params.seed if seed is None else seed)
        self.state = np.zeros(4)
        self.ring = np.zeros(params.delay_steps(dt) + 1)
        self._trk = (track.s, track.x, track.y, track.curvature, track.w_left, track.w_right)

    def noise(self, n: int) -> np.ndarray:
        """Next ``n`` standard-normal samples (drawn even at skill 1 to keep streams aligned)."""
        return self.rng.standard_normal(n)

    def torque(self, state, station: float, wheel, tau_assist: float = 0.0) -> float:
        st = np.asarray(state, dtype=float)
        wh = np.asarray(wheel, dtype=float)
        tau, _ = driver_step(st, float(station), wh, self.dp, self.state, self.ring,
                             float(self.noise(1)[0]), float(tau_assist), self.dt,
                             self.track.closed, *self._trk)
        return float(tau)


def driver_torque(state, wheel, track: TrackModel, params: DriverParams, dt: float,
                  rng_seed: int, *, wheelbase: float = 2.9, steering_ratio: float = 14.0,
                  steps: int = 1, tau_assist: float = 0.0) -> np.ndarray:
    """Torque sequence of a fresh driver held at a fixed state for ``steps`` steps."""
    drv = Driver(params, track, wheelbase, steering_ratio, dt, seed=rng_seed)
    st = np.asarray(getattr(state, "as_array", lambda: state)(), dtype=float)
    wh = np.array([wheel.delta_w, wheel.delta_w_dot]) if hasattr(wheel, "delta_w") else np.asarray(wheel, float)
    frame = project_climb(st[0], st[1], 0, track.closed, *track.kernel_arrays())
    station = float(frame[1])
    return np.array([drv.torque(st, station, wh, tau_assist) for _ in range(steps)])


def learning_discount(level: float) -> float:
    """Learning efficiency under assistance ``level`` (a modeling assumption)."""
    return 1.0 - 0.6 * level / 100.0


def learn(params: DriverParams, trial, exposure: float | None = None,
          discount=learning_discount) -> DriverParams:
    """Skill update after a training trial.

    ``trial`` needs ``S_R`` and ``L`` attributes.  ``exposure`` is accepted for
    interface compatibility and does not enter the update.
    """
    del exposure
    gain = params.learning_rate * (trial.S_R / 100.0) * (1.0 - params.skill) * discount(trial.L)
    skill = min(max(params.skill + gain, 0.0), 1.0)
    return replace(params, skill=skill)


@dataclass(frozen=True)
class PopulationSpec:
    skill_range: tuple[float, float] = (0.15, 0.45)
    noise_range: tuple[float, float] = (0.4, 0.7)
    delay_range: tuple[float, float] = (0.10, 0.20)
    compliance_range: tuple[float, float] = (0.1, 0.5)
    learning_rate: float = 0.08


def sample_population(n: int, seed: int, spec: PopulationSpec = PopulationSpec()) -> list[DriverParams]:
    """``n`` synthetic drivers drawn from a seeded distribution."""
    if n <= 0:
        raise ValueError("population size must be positive")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=n)
    out = []
    for i in range(n):
        out.append(DriverParams(
            skill=float(rng.uniform(*spec.skill_range)),
            noise_sigma=float(rng.uniform(*spec.noise_range)),
            reaction_delay=float(rng.uniform(*spec.delay_range)),
            compliance=float(rng.uniform(*spec.compliance_range)),
            learning_rate=spec.learning_rate,
            seed=int(seeds[i]),
        ))
    return out


def save_population(drivers, path) -> None:
    data = {"synthetic": True, "drivers": [asdict(d) for d in drivers]}
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def load_population(path) -> list[DriverParams]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    items = data["drivers"] if isinstance(data, dict) else data
    known = {f.name for f in fields(DriverParams)}
    out = []
    for i, item in enumerate(items):
        unknown = set(item) - known
        if unknown:
            raise ValueError(f"driver {i}: unknown fields {sorted(unknown)}")
        out.append(DriverParams(**item))
    return out
