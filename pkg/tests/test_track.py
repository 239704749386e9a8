import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from racecoach.track import (KAPPA_MIN, OffTrackWorldError, TrackParseError, TrackValidationError,
                             from_samples, load_track, max_curvature_ahead, project, project_near,
                             save_track, synthetic_circuit)

from conftest import arc_track, straight_track


def test_four_sample_straight():
    s = np.array([0.0, 1.0, 2.0, 3.0])
    t = from_samples(s, s, np.zeros(4), np.full(4, 5.0), np.full(4, 5.0), closed=False)
    assert t.total_length == pytest.approx(3.0)
    assert np.all(t.curvature == 0.0)


def test_circle_curvature():
    t = arc_track(radius=50.0)
    interior = t.curvature[2:-2]
    assert np.max(np.abs(interior - 0.02)) < 1e-4


def test_decreasing_station_names_row(tmp_path):
    rows = ["s,x,y,w_left,w_right"]
    s = [0, 1, 2, 3, 4, 5, 4.5, 7]
    for i, v in enumerate(s):
        rows.append(f"{v},{i},0,5,5")
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(TrackValidationError, match="row 7"):
        load_track(p)


def test_parse_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("s,x,y\n0,0,0\n")
    with pytest.raises(TrackParseError, match="missing columns"):
        load_track(p)
    p.write_text("s,x,y,w_left,w_right\n0,0,0,5,5\n1,abc,0,5,5\n")
    with pytest.raises(TrackParseError, match="row 2"):
        load_track(p)


def test_round_trip_file(tmp_path, circuit):
    p = tmp_path / "c.csv"
    save_track(circuit, p)
    back = load_track(p)
    assert back.closed
    assert back.total_length == pytest.approx(circuit.total_length)
    np.testing.assert_allclose(back.x, circuit.x, atol=1e-6)


def test_projection_examples(straight):
    f = project(straight, (10.0, 0.0))
    assert f.s == pytest.approx(10.0) and f.e_lat == pytest.approx(0.0)
    f = project(straight, (10.0, 2.0))
    assert f.s == pytest.approx(10.0)
    assert f.e_lat == pytest.approx(2.0)
    assert f.d_left == pytest.approx(5.0 - 2.0)
    assert project(straight, (10.0, 6.0)).d_left == pytest.approx(-1.0)


def test_far_point_is_rejected(straight):
    with pytest.raises(OffTrackWorldError):
        project(straight, (50.0, 500.0))


def test_max_curvature_ahead_examples():
    assert max_curvature_ahead(straight_track(), 0.0) == KAPPA_MIN
    assert max_curvature_ahead(arc_track(radius=50.0), 10.0) == pytest.approx(0.02, abs=1e-4)

    # 150 m straight into a hairpin of curvature 0.05 (radius 20 m)
    s = np.arange(0.0, 251.0)
    th = np.clip(s - 150.0, 0.0, None) * 0.05
    x = np.where(s < 150.0, s, 150.0 + 20.0 * np.sin(th))
    y = np.where(s < 150.0, 0.0, 20.0 * (1.0 - np.cos(th)))
    t = from_samples(s, x, y, np.full_like(s, 5.0), np.full_like(s, 5.0), closed=False)
    assert max_curvature_ahead(t, 0.0) == pytest.approx(0.05, abs=1e-3)
    assert max_curvature_ahead(t, 0.0, window=100.0) == KAPPA_MIN


def test_max_curvature_monotone_in_window(circuit):
    for s0 in np.linspace(0.0, circuit.total_length - 1, 25):
        vals = [max_curvature_ahead(circuit, s0, w) for w in (10, 50, 100, 200, 400)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_synthetic_circuit_layout(circuit):
    assert circuit.closed
    assert np.sum(np.abs(circuit.curvature) >= 0.04 - 1e-9) > 0
    fresh = synthetic_circuit()
    np.testing.assert_allclose(fresh.x, circuit.x, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0))
def test_round_trip_projection(circuit, frac):
    s = frac * (circuit.total_length - 1e-6)
    x, y, _ = circuit.point_at(s)
    f = project(circuit, (x, y))
    ds = abs(f.s - s)
    ds = min(ds, circuit.total_length - ds)
    assert ds <= circuit.ds / 2 + 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-4.0, 4.0), st.floats(0.0, 2 * math.pi), st.floats(0.0, 0.099))
def test_projection_continuity(circuit, frac, e, ang, eps):
    s = frac * (circuit.total_length - 1.0)
    x, y = circuit.to_world(s, e)
    a = project_near(circuit, (x, y), s)
    b = project_near(circuit, (x + eps * math.cos(ang), y + eps * math.sin(ang)), s)
    assert abs(a.s - b.s) < eps + circuit.ds
