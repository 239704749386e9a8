"""Receding-horizon planner: warm-started replanning and plan publication."""

from __future__ import annotations

import threading
import time
from typing import Callable

from racecoach.autonomy.ocp import CostToGo, OcpConfig, OcpProblem, solve
from racecoach.autonomy.plan import Plan
from racecoach.track import TrackModel
from racecoach.vehicle import VehicleParams, VehicleState


class Planner:
    """Stateful MPC: keeps the last plan for warm starts and the station hint.

    ``log`` is an optional text stream receiving one JSON line per replan.
    """

    def __init__(self, track: TrackModel, cfg: OcpConfig | None = None,
                 params: VehicleParams | None = None, *, log=None,
                 cost_to_go: CostToGo | None = None):
        self.track = track
        self.cfg = cfg or OcpConfig()
        self.params = params or VehicleParams()
        self.cost_to_go = cost_to_go or CostToGo(track, self.cfg.go_order)
        self.log = log
        self.last: Plan | None = None
        self.s_hint: float | None = None
        self.overruns = 0
        self.replans = 0

    def reset(self, s_hint: float | None = None) -> None:
        self.last = None
        self.s_hint = s_hint
        self.overruns = 0
        self.replans = 0

    def build(self, state: VehicleState, delta_w: float = 0.0,
              s_hint: float | None = None) -> OcpProblem:
        hint = self.s_hint if s_hint is None else s_hint
        return OcpProblem(state, self.track, self.cfg, self.params, delta_w=delta_w,
                          s_hint=hint, cost_to_go=self.cost_to_go)

    def replan(self, t: float, state: VehicleState, delta_w: float = 0.0,
               s_hint: float | None = None) -> Plan:
        nlp = self.build(state, delta_w, s_hint)
        plan = solve(nlp, warm_start=self.last, t0=t)
        self.last = plan
        self.s_hint = nlp.s0
        self.replans += 1
        if self.log is not None:
            self.log.write(plan.to_json() + "\n")
        return plan


class PlanBuffer:
    """Single-slot hand-off; a plan older than the current one is discarded."""

    def __init__(self):
        self._lock = threading.Lock()
        self._plan: Plan | None = None
        self.published = 0

    def publish(self, plan: Plan) -> bool:
        with self._lock:
            if self._plan is not None and plan.t0 <= self._plan.t0:
                return False
            self._plan = plan
            self.published += 1
            return True

    def latest(self) -> Plan | None:
        with self._lock:
            return self._plan


def controller_loop(state_source: Callable[[], tuple[float, VehicleState, float] | None],
                    plan_sink: Callable[[Plan], object], track: TrackModel,
                    cfg: OcpConfig | None = None, *, params: VehicleParams | None = None,
                    stop: threading.Event | None = None, max_cycles: int | None = None,
                    clock=time.monotonic, sleep=time.sleep) -> Planner:
    """Real-time replanning loop (wall clock).

    Every replan period the latest ``(t, state, delta_w)`` snapshot is solved
    and handed to ``plan_sink``.  A solve that exceeds the period is counted
    as an overrun and not published, so the consumer keeps the previous
    plan.  ``state_source`` returning ``None`` ends the loop.
    """
    planner = Planner(track, cfg, params)
    period = planner.cfg.replan_period
    stop = stop or threading.Event()
    next_tick = clock()
    cycles = 0
    while not stop.is_set() and (max_cycles is None or cycles < max_cycles):
        snap = state_source()
        if snap is None:
            break
        t, state, delta_w = snap
        started = clock()
        plan = planner.replan(t, state, delta_w)
        if clock() - started > period:
            planner.overruns += 1
        else:
            plan_sink(plan)
        cycles += 1
        next_tick += period
        wait = next_tick - clock()
        if wait > 0:
            sleep(wait)
        else:
            next_tick = clock()
    return planner
