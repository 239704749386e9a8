"""Optimal control problem: configuration, soft costs, transcription and solve."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, fields

import numpy as np

from racecoach.track import (KAPPA_MIN, OffTrackWorldError, StationFrame, TrackModel,
                             max_curvature_ahead, project, project_near)
from racecoach.vehicle import VehicleControls, VehicleParams, VehicleState
from racecoach.autonomy import _kernels as K
from racecoach.autonomy.plan import Plan, SolveStatus, CostBreakdown, WarmStart


class NumericalFault(ValueError):
    """Non-finite data handed to the planner."""


@dataclass(frozen=True)
class OcpConfig:
    horizon: float = 4.0
    nodes: int = 25
    replan_rate: float = 10.0
    ux_min: float = 1.0
    ux_max: float = 27.5
    uy_max: float = 8.0
    r_max: float = 1.2
    steer_rate_max: float = 8.0
    w_uy: float = 0.1
    w_r: float = 1.0
    w_ax: float = 0.02
    w_ddelta: float = 0.02
    w_tube: float = 50.0
    theta_hp: float = 2.0
    g_sm: float = 0.5
    w_ux: float = 0.05
    K_kappa: float = 0.95
    w_go: float = 0.05
    go_order: int = 3
    go_window: float = 160.0
    curvature_window: float = 200.0
    max_iter: int = 60
    tol: float = 1e-4
    mu_init: float = 0.1
    projection_window: float = 30.0

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError("nodes must be >= 2")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.ux_min < self.ux_max:
            raise ValueError("ux_min must be below ux_max")
        for name in ("w_uy", "w_r", "w_ax", "w_ddelta", "w_tube", "w_ux", "w_go"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.replan_rate <= 0 or self.theta_hp <= 0 or self.K_kappa <= 0:
            raise ValueError("replan_rate, theta_hp and K_kappa must be positive")

    @property
    def dt(self) -> float:
        """Node spacing."""
        return self.horizon / (self.nodes - 1)

    @property
    def replan_period(self) -> float:
        return 1.0 / self.replan_rate

    @classmethod
    def from_mapping(cls, data: dict) -> "OcpConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown [mpc] keys: {sorted(unknown)}")
        kw = {k: (int(v) if k in ("nodes", "go_order", "max_iter") else float(v))
              for k, v in data.items()}
        return cls(**kw)


def speed_target(track: TrackModel, s: float, cfg: OcpConfig, params: VehicleParams) -> float:
    """Curvature-based speed target over the look-ahead window, clipped to the speed box."""
    s = min(max(float(s), 0.0), track.total_length)
    kappa = max_curvature_ahead(track, s, cfg.curvature_window)
    v = math.sqrt((params.mu_f + params.mu_r) * params.g / (2.0 * kappa) * cfg.K_kappa)
    return min(max(v, cfg.ux_min), cfg.ux_max)


def envelope_cost(station: StationFrame, cfg: OcpConfig) -> float:
    """Softplus penalty on the signed distance to the nearer boundary."""
    return cfg.w_tube * K.softplus(-cfg.theta_hp * (cfg.g_sm + station.g_env))


def _taylor_shift(coef, s0):
    """Coefficients (ascending) of p(s0 + sigma) in sigma."""
    out = [float(c) for c in coef]
    s0 = float(s0)
    # repeated synthetic division by (sigma - (-s0))
    for i in range(len(out) - 1):
        for j in range(len(out) - 2, i - 1, -1):
            out[j] += s0 * out[j + 1]
    return np.array(out)


class CostToGo:
    """Cubic fit of the remaining track length as a function of station.

    Fitted once per track; :meth:`around` re-expresses it with the current
    station as origin.
    """

    def __init__(self, track: TrackModel, order: int = 3, extra: float = 200.0):
        length = track.total_length
        s = np.linspace(0.0, length + extra, 400)
        scale = length + extra
        coef = np.polynomial.polynomial.polyfit(s / scale, length - s, order)
        # undo the abscissa scaling
        self.coef = coef / scale ** np.arange(order + 1)
        self.order = order

    def __call__(self, s):
        return np.polynomial.polynomial.polyval(s, self.coef)

    def around(self, s_ref: float) -> np.ndarray:
        out = np.zeros(4)
        shifted = _taylor_shift(self.coef, s_ref)
        out[:min(4, shifted.size)] = shifted[:4]
        return out


class OcpProblem:
    """One transcribed instance of the racing OCP around a measured state.

    Decision variables are ``z[k] = (x, y, psi, u_x, u_y, r, delta_w, a_x)``
    for ``k = 0..N-1`` with positions relative to the measured position.
    """

    def __init__(self, initial: VehicleState, track: TrackModel, cfg: OcpConfig,
                 params: VehicleParams, *, delta_w: float = 0.0, s_hint: float | None = None,
                 cost_to_go: CostToGo | None = None):
        values = (initial.x, initial.y, initial.psi, initial.u_x, initial.u_y, initial.r, delta_w)
        if not all(math.isfinite(v) for v in values):
            raise NumericalFault(f"non-finite initial state {initial!r}")
        self.initial = initial
        self.track = track
        self.cfg = cfg
        self.params = params
        self.p = params.as_array()
        self.delta_meas = float(delta_w)
        n = cfg.nodes
        self.n = n
        if s_hint is None:
            frame = project(track, (initial.x, initial.y))
        else:
            frame = project_near(track, (initial.x, initial.y), s_hint,
                                 window=max(cfg.projection_window, 40.0))
            if abs(frame.e_lat) > 100.0:
                raise OffTrackWorldError("vehicle left the modeled world")
        self.frame = frame
        self.s0 = frame.s
        length = track.total_length
        s_wrapped = frame.s % length if track.closed else frame.s
        self.v_star = speed_target(track, min(s_wrapped, length), cfg, params)
        ctg = cost_to_go or CostToGo(track, cfg.go_order)
        go = ctg.around(frame.s)

        cfgv = np.zeros(K.N_CFG)
        cfgv[K.C_H] = cfg.dt
        cfgv[K.C_WUY] = cfg.w_uy
        cfgv[K.C_WR] = cfg.w_r
        cfgv[K.C_WAX] = cfg.w_ax
        cfgv[K.C_WDD] = cfg.w_ddelta
        cfgv[K.C_WTUBE] = cfg.w_tube
        cfgv[K.C_THETA] = cfg.theta_hp
        cfgv[K.C_GSM] = cfg.g_sm
        cfgv[K.C_WUX] = cfg.w_ux
        cfgv[K.C_VSTAR] = self.v_star
        cfgv[K.C_WGO] = cfg.w_go
        cfgv[K.C_RATE] = cfg.steer_rate_max
        cfgv[K.C_DMEAS] = self.delta_meas
        cfgv[K.C_X0] = initial.x
        cfgv[K.C_Y0] = initial.y
        cfgv[K.C_SREF] = frame.s
        cfgv[K.C_GO0:K.C_GO3 + 1] = go
        self.cfgv = cfgv

        self.xi0 = np.array([0.0, 0.0, initial.psi, initial.u_x, initial.u_y, initial.r])
        lb = np.full((n, K.NZ), -np.inf)
        ub = np.full((n, K.NZ), np.inf)
        lb[1:, 3], ub[1:, 3] = cfg.ux_min, cfg.ux_max
        lb[1:, 4], ub[1:, 4] = -cfg.uy_max, cfg.uy_max
        lb[1:, 5], ub[1:, 5] = -cfg.r_max, cfg.r_max
        lb[:, 6], ub[:, 6] = -params.delta_w_max, params.delta_w_max
        lb[:, 7], ub[:, 7] = params.a_x_min, params.a_x_max
        self.lb = lb
        self.ub = ub
        self.hasl = np.isfinite(lb)
        self.hasu = np.isfinite(ub)
        self._lbk = np.where(self.hasl, lb, 0.0)
        self._ubk = np.where(self.hasu, ub, 0.0)

        self.ds = track.ds
        self.window = max(int(cfg.projection_window / self.ds), 2)
        base = int(math.floor(frame.s / self.ds))
        self.base_hint = base
        self.hints = np.full(n, base, dtype=np.int64)
        self._trk = track.kernel_arrays()

    # -- sizes -------------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return self.n * K.NZ

    @property
    def n_eq(self) -> int:
        return self.n * K.NX

    @property
    def n_ineq(self) -> int:
        return self.n * K.NI

    # -- evaluation helpers -------------------------------------------------
    def _z(self, z):
        z = np.ascontiguousarray(z, dtype=float).reshape(self.n, K.NZ)
        return z

    def _hints_for(self, z):
        """Projection hints seeded from a distance walk along the nodes."""
        hints = np.empty(self.n, dtype=np.int64)
        s = self.s0
        px, py = 0.0, 0.0
        for k in range(self.n):
            s += math.hypot(z[k, 0] - px, z[k, 1] - py)
            px, py = z[k, 0], z[k, 1]
            hints[k] = int(math.floor(s / self.ds))
        return hints

    def _env(self, z, hints=None):
        env = np.empty((self.n, 9))
        if hints is None:
            hints = self._hints_for(z)
        K.project_nodes(z, self.cfgv, hints, self.track.closed, *self._trk, env)
        return env

    def cost(self, z) -> float:
        z = self._z(z)
        parts = np.empty(5)
        return K.cost(z, self.cfgv, self._env(z), parts)

    def cost_breakdown(self, z) -> CostBreakdown:
        z = self._z(z)
        parts = np.empty(5)
        K.cost(z, self.cfgv, self._env(z), parts)
        return CostBreakdown(*(float(v) for v in parts))

    def cost_gradient(self, z, terms=("state", "control", "envelope", "go", "speed")) -> np.ndarray:
        z = self._z(z)
        mask = np.array([float(name in terms) for name in CostBreakdown._fields])
        grad = np.empty_like(z)
        K.cost_grad(z, self.cfgv, self._env(z), mask, grad)
        return grad.ravel()

    def term(self, name: str, z) -> float:
        return getattr(self.cost_breakdown(z), name)

    def constraints(self, z):
        """``(defects (N*6,), inequality rows (N*4,))`` with ``g <= 0`` feasible."""
        z = self._z(z)
        c = np.empty((self.n, K.NX))
        g = np.empty((self.n, K.NI))
        dummy = np.empty((self.n, K.NX, K.NZ))
        dummyg = np.empty((self.n, K.NI, K.NZ))
        K.constraints(z, self.xi0, self.p, self.cfgv, c, g, dummy, dummy, dummyg, dummyg, False)
        return c.ravel(), g.ravel()

    def bounds(self):
        return self.lb.ravel().copy(), self.ub.ravel().copy()

    # -- initial guesses -----------------------------------------------------
    def rollout(self, controls) -> np.ndarray:
        """Dynamics-consistent guess: backward-Euler trajectory under ``controls`` (N x 2)."""
        controls = np.ascontiguousarray(controls, dtype=float).reshape(self.n, 2)
        states = np.empty((self.n, K.NX))
        K.implicit_rollout(self.xi0, controls, self.p, self.cfg.dt, states)
        return np.hstack([states, controls])

    def cold_start(self) -> np.ndarray:
        """Coasting guess that holds the measured wheel angle."""
        controls = np.zeros((self.n, 2))
        controls[:, 0] = self.delta_meas
        return self.rollout(controls)

    def shifted_guess(self, warm: WarmStart, t_offset: float) -> tuple[np.ndarray, WarmStart]:
        """Previous solution advanced by ``t_offset`` seconds and re-based here."""
        h = self.cfg.dt
        n = self.n
        tq = t_offset + h * np.arange(n)
        t_prev = h * np.arange(warm.z_world.shape[0])
        z = np.empty((n, K.NZ))
        for j in range(K.NZ):
            z[:, j] = np.interp(tq, t_prev, warm.z_world[:, j])
        over = tq > t_prev[-1]
        if np.any(over):
            last = warm.z_world[-1]
            dt = tq[over] - t_prev[-1]
            c, s = math.cos(last[2]), math.sin(last[2])
            z[over, 0] = last[0] + dt * (last[3] * c - last[4] * s)
            z[over, 1] = last[1] + dt * (last[3] * s + last[4] * c)
            z[over, 2] = last[2] + dt * last[5]
        z[:, 0] -= self.initial.x
        z[:, 1] -= self.initial.y
        z[0, :K.NX] = self.xi0

        def shift(arr):
            out = np.empty((n, arr.shape[1]))
            for j in range(arr.shape[1]):
                out[:, j] = np.interp(tq, t_prev, arr[:, j])
            return out

        duals = WarmStart(z_world=warm.z_world, lam=shift(warm.lam), s=shift(warm.s),
                          nu=shift(warm.nu), zl=shift(warm.zl), zu=shift(warm.zu))
        return z, duals


def build_ocp(initial: VehicleState, track: TrackModel, cfg: OcpConfig,
              params: VehicleParams | None = None, **kw) -> OcpProblem:
    """Transcribe the OCP around ``initial``; raises OffTrackWorldError off the map."""
    return OcpProblem(initial, track, cfg, params or VehicleParams(), **kw)


def solve(nlp: OcpProblem, warm_start: Plan | None = None, *, t0: float = 0.0,
          initial_guess=None, trace=None) -> Plan:
    """Solve one OCP instance with the in-module interior-point method.

    ``warm_start`` is the previously published plan; it is shifted by the
    time elapsed since it was computed.  Never raises on non-convergence:
    the best iterate is returned with status ``max-iter``, and an iterate
    that is still dynamically infeasible is replaced by a rollout of its
    controls (``infeasible-recovered``).
    """
    cfg = nlp.cfg
    n = nlp.n
    warm = False
    lam = np.zeros((n, K.NX))
    s = np.zeros((n, K.NI))
    nu = np.zeros((n, K.NI))
    zl = np.zeros((n, K.NZ))
    zu = np.zeros((n, K.NZ))
    if initial_guess is not None:
        z = np.array(initial_guess, dtype=float).reshape(n, K.NZ)
    elif warm_start is not None and warm_start.warm is not None:
        z, duals = nlp.shifted_guess(warm_start.warm, t0 - warm_start.t0)
        lam, s, nu, zl, zu = (np.ascontiguousarray(a) for a in
                              (duals.lam, duals.s, duals.nu, duals.zl, duals.zu))
        warm = True
    else:
        z = nlp.cold_start()
    z = np.ascontiguousarray(z)
    if not np.all(np.isfinite(z)):
        z = nlp.cold_start()
        warm = False
    hints = nlp._hints_for(z)
    info = np.zeros(6)
    started = time.perf_counter()
    K.ipm_solve(z, lam, s, nu, zl, zu, nlp.xi0, nlp.p, nlp.cfgv, nlp._lbk, nlp._ubk,
                nlp.hasl, nlp.hasu, hints, nlp.track.closed, *nlp._trk,
                cfg.max_iter, cfg.tol, cfg.mu_init, warm, info,
                trace if trace is not None else np.zeros((0, 10)))
    elapsed = time.perf_counter() - started
    status = SolveStatus.OPTIMAL if info[0] == K.OPTIMAL else SolveStatus.MAX_ITER
    if status is SolveStatus.MAX_ITER and info[3] > 1e-2:
        z = nlp.rollout(np.clip(z[:, 6:8], nlp.lb[0, 6:8], nlp.ub[0, 6:8]))
        status = SolveStatus.INFEASIBLE_RECOVERED
    parts = np.empty(5)
    env = np.empty((n, 9))
    K.project_nodes(z, nlp.cfgv, hints, nlp.track.closed, *nlp._trk, env)
    K.cost(z, nlp.cfgv, env, parts)
    z_world = z.copy()
    z_world[:, 0] += nlp.initial.x
    z_world[:, 1] += nlp.initial.y
    return Plan(
        t0=float(t0),
        times=cfg.dt * np.arange(n),
        states=z_world[:, :K.NX].copy(),
        controls=z_world[:, K.NX:].copy(),
        status=status,
        solve_time=elapsed,
        iterations=int(info[1]),
        kkt_error=float(info[2]),
        cost=CostBreakdown(*(float(v) for v in parts)),
        v_star=nlp.v_star,
        station=nlp.s0,
        warm=WarmStart(z_world=z_world, lam=lam, s=s, nu=nu, zl=zl, zu=zu),
    )
