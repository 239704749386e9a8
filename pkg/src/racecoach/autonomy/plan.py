"""Planner output: node trajectory, references and solve diagnostics."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from racecoach.vehicle import VehicleControls, VehicleState


class SolveStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max-iter"
    INFEASIBLE_RECOVERED = "infeasible-recovered"


class CostBreakdown(NamedTuple):
    state: float
    control: float
    envelope: float
    go: float
    speed: float

    @property
    def total(self) -> float:
        return sum(self)


@dataclass(frozen=True)
class WarmStart:
    """Primal and dual iterate kept for the next solve (positions in world frame)."""

    z_world: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    nu: np.ndarray
    zl: np.ndarray
    zu: np.ndarray


@dataclass(frozen=True, eq=False)
class Plan:
    t0: float
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    status: SolveStatus
    solve_time: float
    iterations: int
    kkt_error: float
    cost: CostBreakdown
    v_star: float = float("nan")
    station: float = float("nan")
    warm: WarmStart | None = field(default=None, repr=False)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def nodes(self) -> list[tuple[float, VehicleState, VehicleControls]]:
        return [(float(t), VehicleState.from_array(x), VehicleControls(float(u[0]), float(u[1])))
                for t, x, u in zip(self.times, self.states, self.controls)]

    def reference(self, t: float) -> tuple[float, float]:
        """``(delta_w_ref, a_x_ref)`` at absolute time ``t`` by linear interpolation."""
        tau = t - self.t0
        d = float(np.interp(tau, self.times, self.controls[:, 0]))
        a = float(np.interp(tau, self.times, self.controls[:, 1]))
        return d, a

    def same_trajectory(self, other: "Plan") -> bool:
        return (np.array_equal(self.states, other.states)
                and np.array_equal(self.controls, other.controls))

    def to_json(self) -> str:
        return json.dumps({
            "t0": self.t0,
            "status": self.status.value,
            "solve_time": self.solve_time,
            "iterations": self.iterations,
            "kkt_error": self.kkt_error,
            "v_star": self.v_star,
            "station": self.station,
            "cost": self.cost._asdict(),
            "nodes": [
                {"t": float(t), "x": float(x[0]), "y": float(x[1]), "psi": float(x[2]),
                 "u_x": float(x[3]), "u_y": float(x[4]), "r": float(x[5]),
                 "delta_w": float(u[0]), "a_x": float(u[1])}
                for t, x, u in zip(self.times, self.states, self.controls)
            ],
        })
