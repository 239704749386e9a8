"""Closed-loop runs: planner at 10 Hz around the compiled 500 Hz loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from racecoach.autonomy import CostToGo, OcpConfig
from racecoach.autonomy.planner import Planner
from racecoach.driver import N_DPARAMS, Driver, DriverParams
from racecoach.haptics import HapticParams, PidState, schedule
from racecoach.harness import loop as L
from racecoach.scoring import (FAULT, OFFTRACK, RUNNING, AutonomyProfile, ScoringConfig,
                               Termination, TrialRecord, seal_trial)
from racecoach.track import OffTrackWorldError, TrackModel, project
from racecoach.vehicle import PLANT_DT, VehicleParams, VehicleState


class TrialFault(RuntimeError):
    """Simulation fault annotated with the run context."""


@dataclass(frozen=True)
class SimConfig:
    plant_dt: float = PLANT_DT
    replan_steps: int = 50
    max_time: float = 400.0
    aligning_cutoff_hz: float = 20.0

    def __post_init__(self):
        if self.plant_dt <= 0 or self.replan_steps < 1 or self.max_time <= 0:
            raise ValueError("invalid simulation settings")


@dataclass
class Stack:
    """Everything a closed-loop run needs, shared across runs (read-only)."""

    track: TrackModel
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    mpc: OcpConfig = field(default_factory=OcpConfig)
    haptics: HapticParams = field(default_factory=HapticParams)
    sim: SimConfig = field(default_factory=SimConfig)
    cost_to_go: CostToGo | None = None

    def __post_init__(self):
        if self.cost_to_go is None:
            self.cost_to_go = CostToGo(self.track, self.mpc.go_order)

    def start_state(self, station: float = 0.0, e_lat: float = 0.0,
                    speed: float | None = None) -> VehicleState:
        x, y, h = self.track.point_at(station)
        px = x - e_lat * math.sin(h)
        py = y + e_lat * math.cos(h)
        u = self.mpc.ux_min if speed is None else speed
        return VehicleState(px, py, h, u, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class RunResult:
    termination: Termination
    time: float
    area: float
    station: float
    start_station: float
    tracking_rms: float
    max_speed: float
    final_state: VehicleState
    replans: int
    solve_iterations: np.ndarray
    solve_status: tuple
    log: np.ndarray

    @property
    def distance(self) -> float:
        return self.station - self.start_station


def simulate(stack: Stack, *, level: float = 100.0, driver: DriverParams | None = None,
             seed: int | None = None, initial: VehicleState | None = None,
             start_station: float = 0.0, finish_station: float | None = None,
             log_stride: int = 0, planner_log=None, max_time: float | None = None) -> RunResult:
    """Run one closed-loop lap (or until ``finish_station``/termination)."""
    track = stack.track
    sim = stack.sim
    dt = sim.plant_dt
    params = stack.vehicle
    state0 = initial or stack.start_state(start_station)
    frame = project(track, (state0.x, state0.y))
    s0 = frame.s
    if track.closed and s0 - start_station > 0.5 * track.total_length:
        s0 -= track.total_length
    finish = (start_station + track.total_length) if finish_station is None else finish_station
    max_time = sim.max_time if max_time is None else max_time

    planner = Planner(track, stack.mpc, params, log=planner_log, cost_to_go=stack.cost_to_go)
    planner.reset(s_hint=s0)

    state = state0.as_array()
    wheel = np.zeros(2)
    pid = PidState().buf
    alpha, beta, gamma = schedule(float(level))
    hp = stack.haptics.as_array()
    p = params.as_array()
    if driver is not None:
        drv = Driver(driver, track, params.wheelbase, params.steering_ratio, dt, seed=seed)
        dp, dstate, ring = drv.dp, drv.state, drv.ring
    else:
        drv = None
        dp, dstate, ring = np.zeros(N_DPARAMS), np.zeros(4), np.zeros(1)
    limits = np.array([1.2, 8.0, 15.0])
    consts = np.zeros(L.N_CONST)
    consts[L.K_DT] = dt
    tau_f = 1.0 / (2.0 * math.pi * sim.aligning_cutoff_hz)
    consts[L.K_TCA] = dt / (tau_f + dt)
    consts[L.K_TRAIL] = params.trail
    consts[L.K_DWMAX] = params.delta_w_max
    consts[L.K_AXMIN] = params.a_x_min
    consts[L.K_AXMAX] = params.a_x_max
    consts[L.K_FINISH] = finish
    consts[L.K_DRIVER] = 1.0 if drv is not None else 0.0
    consts[L.K_STRIDE] = log_stride
    acc = np.zeros(L.N_ACC)
    acc[L.A_S] = s0
    acc[L.A_HINT] = math.floor(s0 / track.ds)
    acc[L.A_DL] = frame.d_left
    acc[L.A_DR] = frame.d_right
    acc[L.A_E] = frame.e_lat
    max_steps = int(math.ceil(max_time / dt))
    log = np.zeros((max_steps // log_stride + 1 if log_stride > 0 else 0, L.N_LOG))
    trk = (track.closed, track.s, track.x, track.y) + track.kernel_arrays()[3:] + (track.curvature,)
    n = sim.replan_steps
    zero_noise = np.zeros(n)
    iters = []
    statuses = []
    code = RUNNING
    while code == RUNNING:
        if acc[L.A_STEP] >= max_steps:
            code = FAULT
            break
        t = acc[L.A_T]
        vs = VehicleState.from_array(state)
        try:
            plan = planner.replan(t, vs, float(wheel[0]), s_hint=float(acc[L.A_S]))
        except OffTrackWorldError:
            code = OFFTRACK
            break
        except ArithmeticError as exc:
            raise TrialFault(f"planner failed at t = {t:.3f} s: {exc!r}") from exc
        iters.append(plan.iterations)
        statuses.append(plan.status.value)
        noise = drv.noise(n) if drv is not None else zero_noise
        code = L.advance(n, state, wheel, pid, dstate, ring, noise, plan.t0, plan.times,
                         plan.controls, alpha, beta, gamma, hp, p, dp, limits, consts, acc, log,
                         *trk)
    if code == FAULT and not np.all(np.isfinite(state)):
        raise TrialFault(f"non-finite plant state at t = {acc[L.A_T]:.3f} s")
    nerr = max(acc[L.A_NERR], 1.0)
    return RunResult(
        termination=Termination.from_code(code),
        time=float(acc[L.A_T]),
        area=float(acc[L.A_AREA]),
        station=float(acc[L.A_S]),
        start_station=float(s0),
        tracking_rms=float(math.sqrt(acc[L.A_SQERR] / nerr)),
        max_speed=float(acc[L.A_MAXUX]),
        final_state=VehicleState.from_array(state),
        replans=len(iters),
        solve_iterations=np.array(iters, dtype=int),
        solve_status=tuple(statuses),
        log=log[:int(acc[L.A_NLOG])].copy(),
    )


def autonomy_profile(result: RunResult) -> AutonomyProfile:
    """Cumulative autonomy time by station from a logged autonomy-only lap."""
    if result.termination is not Termination.FINISHED:
        raise ValueError(f"autonomy lap did not finish ({result.termination.value})")
    log = result.log
    if log.shape[0] < 2:
        raise ValueError("autonomy lap needs a per-step log")
    s = np.concatenate([[result.start_station], log[:, 1]])
    t = np.concatenate([[0.0], log[:, 0]])
    return AutonomyProfile(s - result.start_station, t, lap_time=result.time, area=result.area)


def score_run(result: RunResult, stack: Stack, cfg: ScoringConfig, profile: AutonomyProfile,
              level: float) -> TrialRecord:
    length = stack.track.total_length
    s_f = min(max(result.distance, 0.0), length)
    return seal_trial(result.termination, result.time, result.area, s_f, length, cfg,
                      profile, level)
