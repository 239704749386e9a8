"""Score-driven fading of the assistance level between trials.

The level moves toward the passing score by a clamped proportional step,
is blended with a nominal decay curve, and is then held between lower and
upper S-curves.  From trial 24 on the assistance is switched off.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

PASSING_SCORE = 90.0
LAST_ASSISTED_TRIAL = 23


def nominal_curve(K: float) -> float:
    return 50.0 * (math.tanh(-0.165 * (K - 12.0)) + 1.0)


def upper_curve(K: float) -> float:
    return 50.0 * (math.tanh(-0.175 * (K - 14.5)) + 1.0)


def lower_curve(K: float) -> float:
    return max(40.0 * (math.tanh(-0.17 * (K - 12.0)) + 1.0) - 5.0, 0.0)


@dataclass(frozen=True)
class FadingConfig:
    """Blend weights, step gains and clamp limits of the level update."""

    w1: float = 0.8
    w2: float = 0.2
    passing_score: float = PASSING_SCORE
    gain_up: float = 0.8
    gain_down: float = 1.5
    max_decrease: float = 15.0
    max_increase: float = 25.0
    last_assisted_trial: int = LAST_ASSISTED_TRIAL

    def __post_init__(self):
        if min(self.w1, self.w2) < 0 or not math.isclose(self.w1 + self.w2, 1.0, abs_tol=1e-12):
            raise ValueError("w1 and w2 must be non-negative and sum to 1")
        if min(self.gain_up, self.gain_down, self.max_decrease, self.max_increase) < 0:
            raise ValueError("gains and clamp limits must be non-negative")


DEFAULT_FADING = FadingConfig()


def delta_level(S_K: float, cfg: FadingConfig = DEFAULT_FADING) -> float:
    """Level change after a trial scored ``S_K``; positive means more assistance."""
    err = cfg.passing_score - float(S_K)
    gain = cfg.gain_down if err <= 0.0 else cfg.gain_up
    return min(max(gain * err, -cfg.max_decrease), cfg.max_increase)


@dataclass
class FadingState:
    """Trial counter ``K`` (1-based), the level for trial ``K`` and the update history."""

    K: int = 1
    L: float = 100.0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("trial index starts at 1")
        if not 0.0 <= self.L <= 100.0:
            raise ValueError(f"level {self.L} outside [0, 100]")


def next_level(state: FadingState, S_K: float, cfg: FadingConfig = DEFAULT_FADING) -> float:
    """Close trial ``state.K`` with score ``S_K`` and advance ``state`` to the next trial."""
    if not 0.0 <= S_K <= 100.0:
        raise ValueError(f"score {S_K} outside [0, 100]")
    K = state.K
    blended = cfg.w1 * (state.L + delta_level(S_K, cfg)) + cfg.w2 * nominal_curve(K)
    # curves indexed at the closing trial K
    level = min(max(blended, lower_curve(K)), upper_curve(K))
    if K + 1 > cfg.last_assisted_trial:
        level = 0.0
    level = min(max(level, 0.0), 100.0)
    state.history.append((K, state.L, float(S_K)))
    state.K = K + 1
    state.L = level
    return level


class Group(str, enum.Enum):
    SELF_LEARNING = "self_learning"
    FULL_ASSIST = "full_assist"
    FADING = "fading"


def level_for_group(group, state: FadingState | None = None, S_K: float | None = None,
                    cfg: FadingConfig = DEFAULT_FADING) -> float:
    """Training level for ``group``.

    For the fading group, ``state`` carries the current level; when ``S_K``
    (the score of the trial just run) is given the state advances first.
    """
    group = Group(group)
    if group is Group.SELF_LEARNING:
        return 0.0
    if group is Group.FULL_ASSIST:
        return 100.0
    if state is None:
        raise ValueError("the fading group needs a FadingState")
    if S_K is not None:
        return next_level(state, S_K, cfg)
    return state.L


def curve_table(K_max: int = 30) -> list[dict]:
    return [{"K": K, "G_n": nominal_curve(K), "G_u": upper_curve(K), "G_l": lower_curve(K)}
            for K in range(1, K_max + 1)]


def write_fading_json(path, state: FadingState, K_max: int = 30) -> None:
    """Per-subject level trace plus the three curves sampled at integer K."""
    data = {
        "history": [{"K": K, "L": L, "S_K": S} for K, L, S in state.history],
        "curves": curve_table(K_max),
    }
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
