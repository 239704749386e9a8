import numpy as np
import pytest
from hypothesis import given, strategies as st

from racecoach.scoring import (AreaAccumulator, AutonomyProfile, ScoringConfig, Termination,
                               check_termination, completion_percentage, metric_score,
                               projected_lap_time, projected_violation_area, racing_score, seal_trial)
from racecoach.track import StationFrame, project
from racecoach.vehicle import VehicleState

CFG = ScoringConfig(T_best=100.0, T_worst=200.0, T_mpc=110.0)
ON = StationFrame(s=50.0, e_lat=0.0, d_left=5.0, d_right=5.0)


def test_termination_thresholds():
    assert check_termination(VehicleState(r=1.19, u_y=7.9), ON, CFG) is None
    assert check_termination(VehicleState(r=1.21), ON, CFG) is Termination.SPIN
    assert check_termination(VehicleState(r=-1.21), ON, CFG) is Termination.SPIN
    assert check_termination(VehicleState(u_y=8.01), ON, CFG) is Termination.SLIDE
    far = StationFrame(s=50.0, e_lat=20.01, d_left=-15.01, d_right=25.01)
    assert check_termination(VehicleState(), far, CFG) is Termination.OFFTRACK


def test_completion():
    assert completion_percentage(None, 800.0, finished=True) == 1.0
    assert completion_percentage(400.0, 800.0) == 0.5
    assert completion_percentage(0.0, 800.0) == 0.0


def test_lap_time_projection():
    assert projected_lap_time(110.0, None, CFG, finished=True) == 110.0
    assert projected_lap_time(60.0, 400.0, CFG, T_mpc_at_sf=50.0) == pytest.approx(132.0, abs=1e-12)
    assert projected_lap_time(3.0, 0.0, CFG, T_mpc_at_sf=1.0) == CFG.T_worst


def test_lap_time_projection_through_profile():
    prof = AutonomyProfile([0.0, 400.0, 800.0], [0.0, 50.0, 110.0])
    assert projected_lap_time(60.0, 400.0, CFG, prof) == pytest.approx(132.0, abs=1e-12)


def test_area_projection():
    assert projected_violation_area(10.0, 0.5, CFG) == 20.0
    assert projected_violation_area(18.5, 1.0, CFG, finished=True) == 18.5
    assert projected_violation_area(3.0, 0.0, CFG) == CFG.A_worst


def test_metric_score_exact():
    assert metric_score(100.0, 100.0, 200.0) == 100.0
    assert metric_score(200.0, 100.0, 200.0) == 0.0
    assert metric_score(150.0, 100.0, 200.0) == 50.0
    assert metric_score(90.0, 100.0, 200.0) == 100.0
    assert metric_score(250.0, 100.0, 200.0) == 0.0
    with pytest.raises(ValueError):
        metric_score(1.0, 2.0, 2.0)


def test_racing_score_fixtures():
    assert racing_score(1.0, 100.0, 100.0) == 100.0
    assert racing_score(0.5, 80.0, 60.0) == 37.0
    assert racing_score(0.0, 80.0, 60.0) == 0.0


def test_racing_score_monotone_random():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        p, p2 = np.sort(rng.uniform(0, 1, 2))
        t, t2 = np.sort(rng.uniform(80, 260, 2))
        a, a2 = np.sort(rng.uniform(0, 600, 2))
        st_, st2 = metric_score(t, 100, 200), metric_score(t2, 100, 200)
        sa, sa2 = metric_score(a, 0, 500), metric_score(a2, 0, 500)
        base = racing_score(p, st_, sa)
        assert 0.0 <= base <= 100.0
        assert racing_score(p2, st_, sa) >= base
        assert racing_score(p, st2, sa) <= base
        assert racing_score(p, st_, sa2) <= base


@given(st.floats(0, 1), st.floats(0, 100), st.floats(0, 100))
def test_racing_score_bounds(p, s_t, s_a):
    assert 0.0 <= racing_score(p, s_t, s_a) <= 100.0


def test_seal_finished_uses_raw_metrics():
    prof = AutonomyProfile([0.0, 800.0], [0.0, 110.0])
    rec = seal_trial(Termination.FINISHED, 123.4, 7.5, 800.0, 800.0, CFG, prof, level=35.0)
    assert (rec.p_l, rec.T_l, rec.A_B) == (1.0, 123.4, 7.5)
    assert rec.S_R == rec.p_l * (0.7 * rec.S_T + 0.3 * rec.S_A)
    assert rec.row()[-1] == "finished" and rec.L == 35.0


def test_seal_midway_failure():
    prof = AutonomyProfile([0.0, 400.0, 800.0], [0.0, 50.0, 110.0])
    rec = seal_trial(Termination.SPIN, 60.0, 10.0, 400.0, 800.0, CFG, prof)
    assert rec.p_l == 0.5
    assert rec.T_l == pytest.approx(132.0)
    assert rec.A_B == 20.0


def test_config_contract():
    with pytest.raises(ValueError):
        ScoringConfig(T_best=10, T_worst=5)
    with pytest.raises(ValueError):
        ScoringConfig(T_best=1, T_worst=2, w_t=0.6, w_a=0.3)
    cal = ScoringConfig.from_autonomy(57.5)
    assert (cal.T_best, cal.T_worst, cal.T_mpc, cal.A_worst) == (57.5, 115.0, 57.5, 500.0)


def _shoelace(xs, ys):
    return 0.5 * abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1)))


@pytest.mark.parametrize("depths", [(0, 2, 2, 0), (0, 1, 3, 0.5, 0), (0, 4, 0)])
def test_area_matches_polygon(straight, depths):
    # excursion beyond the left boundary (y = 5) along a piecewise-linear path
    knots_x = np.linspace(100.0, 160.0, len(depths))
    knots_y = 5.0 + np.asarray(depths, float)
    xs = np.linspace(100.0, 160.0, 3001)
    ys = np.interp(xs, knots_x, knots_y)
    acc = AreaAccumulator(station=xs[0])
    for x, y in zip(xs, ys):
        f = project(straight, (x, y))
        acc.update(f.s, f.g_env)
    poly = _shoelace(np.concatenate([knots_x, knots_x[::-1]]),
                     np.concatenate([knots_y, np.full(len(knots_x), 5.0)]))
    assert acc.area == pytest.approx(poly, rel=0.01)
