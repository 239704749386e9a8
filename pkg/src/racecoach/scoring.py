"""Racing score: terminations, lap completion, projected lap time and violation area."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

RESULT_COLUMNS = ("group", "subject", "phase", "trial", "L", "p_l", "T_l", "A_B",
                  "S_T", "S_A", "S_R", "termination")

# termination codes shared with the compiled simulation loop
RUNNING, FINISHED, SPIN, SLIDE, OFFTRACK, FAULT = range(6)


class Termination(str, enum.Enum):
    FINISHED = "finished"
    SPIN = "spin"
    SLIDE = "slide"
    OFFTRACK = "offtrack"
    FAULT = "fault"

    @classmethod
    def from_code(cls, code: int) -> "Termination":
        return {FINISHED: cls.FINISHED, SPIN: cls.SPIN, SLIDE: cls.SLIDE,
                OFFTRACK: cls.OFFTRACK, FAULT: cls.FAULT}[int(code)]


@dataclass(frozen=True)
class ScoringConfig:
    T_best: float
    T_worst: float
    A_best: float = 0.0
    A_worst: float = 500.0
    T_mpc: float | None = None
    yaw_rate_limit: float = 1.2
    lat_vel_limit: float = 8.0
    offtrack_limit: float = 15.0
    w_t: float = 0.7
    w_a: float = 0.3
    passing_score: float = 90.0
    s_min: float = 5.0

    def __post_init__(self):
        if self.T_mpc is None:
            object.__setattr__(self, "T_mpc", self.T_best)
        if not self.T_best < self.T_worst:
            raise ValueError("T_best must be below T_worst")
        if not self.A_best < self.A_worst:
            raise ValueError("A_best must be below A_worst")
        if not math.isclose(self.w_t + self.w_a, 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("w_t + w_a must equal 1")
        if min(self.yaw_rate_limit, self.lat_vel_limit, self.offtrack_limit) <= 0:
            raise ValueError("termination limits must be positive")

    @classmethod
    def from_autonomy(cls, T_mpc: float, A_mpc: float = 0.0, **overrides) -> "ScoringConfig":
        """Calibration from the autonomy-only lap: best = autonomy, T_worst = 2*T_mpc."""
        base = dict(T_best=T_mpc, T_worst=2.0 * T_mpc, A_best=A_mpc, A_worst=500.0, T_mpc=T_mpc)
        base.update(overrides)
        return cls(**base)

    def limits(self) -> np.ndarray:
        return np.array([self.yaw_rate_limit, self.lat_vel_limit, self.offtrack_limit])


@njit(cache=True)
def termination_code(r, u_y, d_left, d_right, limits):
    """First triggered termination (spin, then slide, then off-track) or RUNNING."""
    if abs(r) > limits[0]:
        return SPIN
    if abs(u_y) > limits[1]:
        return SLIDE
    if min(d_left, d_right) < -limits[2]:
        return OFFTRACK
    return RUNNING


@njit(cache=True)
def area_increment(g_env, ds):
    """Boundary-violation area gained over a forward station increment ``ds``."""
    if g_env >= 0.0 or ds <= 0.0:
        return 0.0
    return -g_env * ds


def check_termination(state, station, cfg: ScoringConfig) -> Termination | None:
    code = termination_code(float(state.r), float(state.u_y), float(station.d_left),
                            float(station.d_right), cfg.limits())
    return None if code == RUNNING else Termination.from_code(code)


class AreaAccumulator:
    """Step-wise integral of the excursion depth beyond the nearer boundary."""

    def __init__(self, station: float = 0.0):
        self.area = 0.0
        self.station = float(station)

    def update(self, station: float, g_env: float) -> float:
        self.area += area_increment(float(g_env), float(station) - self.station)
        self.station = float(station)
        return self.area


class AutonomyProfile:
    """Cumulative autonomy time ``T'_mpc(s)`` along the lap."""

    def __init__(self, stations, times, lap_time: float | None = None, area: float = 0.0):
        s = np.asarray(stations, dtype=float)
        t = np.asarray(times, dtype=float)
        if s.size < 2 or s.shape != t.shape:
            raise ValueError("profile needs matching station and time samples")
        # keep the first arrival at each station
        keep = np.concatenate([[True], s[1:] > np.maximum.accumulate(s)[:-1]])
        self.stations = s[keep]
        self.times = t[keep]
        self.lap_time = float(self.times[-1] if lap_time is None else lap_time)
        self.area = float(area)

    def time_at(self, s: float) -> float:
        return float(np.interp(s, self.stations, self.times))


def completion_percentage(s_f: float | None, total_length: float, finished: bool = False) -> float:
    if finished or s_f is None:
        return 1.0
    return float(min(max(s_f / total_length, 0.0), 1.0))


def projected_lap_time(T_prime: float, s_f: float | None, cfg: ScoringConfig,
                       profile=None, *, finished: bool = False, T_mpc_at_sf: float | None = None) -> float:
    """``T_l = (T_mpc / T'_mpc(s_f)) * T'`` for an incomplete lap, ``T'`` when finished."""
    if finished:
        return float(T_prime)
    if s_f is None or s_f < cfg.s_min:
        return float(cfg.T_worst)
    partial = T_mpc_at_sf if T_mpc_at_sf is not None else profile.time_at(s_f)
    if not partial > 0:
        return float(cfg.T_worst)
    return float(cfg.T_mpc / partial * T_prime)


def projected_violation_area(A_prime: float, p_l: float, cfg: ScoringConfig,
                             finished: bool = False) -> float:
    if finished:
        return float(A_prime)
    if p_l <= 0.0:
        return float(cfg.A_worst)
    return float(A_prime / p_l)


def metric_score(value: float, best: float, worst: float) -> float:
    if not best < worst:
        raise ValueError("best must be below worst")
    if value < best:
        return 100.0
    if value > worst:
        return 0.0
    return min(100.0 * ((worst - value) / (worst - best)), 100.0)


def racing_score(p_l: float, S_T: float, S_A: float, cfg: ScoringConfig | None = None) -> float:
    w_t, w_a = (0.7, 0.3) if cfg is None else (cfg.w_t, cfg.w_a)
    return p_l * (w_t * S_T + w_a * S_A)


@dataclass(frozen=True)
class TrialRecord:
    p_l: float
    T_l: float
    A_B: float
    S_T: float
    S_A: float
    S_R: float
    termination: Termination
    T_raw: float
    A_raw: float
    s_f: float
    L: float = 0.0
    group: str = ""
    subject: int = 0
    phase: str = ""
    trial: int = 0

    @property
    def finished(self) -> bool:
        return self.termination is Termination.FINISHED

    def labeled(self, **kw) -> "TrialRecord":
        return replace(self, **kw)

    def row(self) -> list[str]:
        return [self.group, str(self.subject), self.phase, str(self.trial), _fmt(self.L),
                _fmt(self.p_l), _fmt(self.T_l), _fmt(self.A_B), _fmt(self.S_T), _fmt(self.S_A),
                _fmt(self.S_R), self.termination.value]


def _fmt(v: float) -> str:
    return repr(float(v))


def seal_trial(termination: Termination, T_raw: float, A_raw: float, s_f: float,
               total_length: float, cfg: ScoringConfig, profile: AutonomyProfile | None = None,
               level: float = 0.0) -> TrialRecord:
    finished = termination is Termination.FINISHED
    p_l = completion_percentage(s_f, total_length, finished)
    T_l = projected_lap_time(T_raw, s_f, cfg, profile, finished=finished)
    A_B = projected_violation_area(A_raw, p_l, cfg, finished=finished)
    S_T = metric_score(T_l, cfg.T_best, cfg.T_worst)
    S_A = metric_score(A_B, cfg.A_best, cfg.A_worst)
    return TrialRecord(p_l=p_l, T_l=T_l, A_B=A_B, S_T=S_T, S_A=S_A,
                       S_R=racing_score(p_l, S_T, S_A, cfg), termination=termination,
                       T_raw=float(T_raw), A_raw=float(A_raw), s_f=float(s_f), L=float(level))
