"""Envelope-based racing MPC."""

from racecoach.autonomy.plan import CostBreakdown, Plan, SolveStatus, WarmStart
from racecoach.autonomy.ocp import (CostToGo, NumericalFault, OcpConfig, OcpProblem,
                                    build_ocp, envelope_cost, solve, speed_target)
from racecoach.autonomy.planner import PlanBuffer, Planner, controller_loop

__all__ = [
    "CostBreakdown", "CostToGo", "NumericalFault", "OcpConfig", "OcpProblem", "Plan",
    "PlanBuffer", "Planner", "SolveStatus", "WarmStart", "build_ocp", "controller_loop",
    "envelope_cost", "solve", "speed_target",
]
