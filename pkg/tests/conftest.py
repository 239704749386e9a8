import math

import numpy as np
import pytest

from racecoach.track import default_track, from_samples


@pytest.fixture(scope="session")
def circuit():
    return default_track()


@pytest.fixture(scope="session")
def stack(circuit):
    from racecoach.harness.trial import Stack
    return Stack(circuit)


def straight_track(length=400.0, width=5.0, step=1.0):
    s = np.arange(0.0, length + step / 2, step)
    return from_samples(s, s.copy(), np.zeros_like(s), np.full_like(s, width),
                        np.full_like(s, width), closed=False)


def arc_track(radius=50.0, sweep=math.pi, width=5.0):
    s = np.arange(0.0, radius * sweep + 0.5, 1.0)
    th = s / radius
    return from_samples(s, radius * np.sin(th), radius * (1 - np.cos(th)),
                        np.full_like(s, width), np.full_like(s, width), closed=False)


@pytest.fixture(scope="session")
def straight():
    return straight_track()


_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(n, ok, detail)``."""
    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
