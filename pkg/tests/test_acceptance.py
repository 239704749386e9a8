"""Acceptance criteria 1-10; each test prints one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

import racecoach.autonomy.planner as planner_mod
from racecoach.autonomy import SolveStatus, build_ocp, solve
from racecoach.driver import DriverParams
from racecoach.fading import FadingState, delta_level, lower_curve, next_level, nominal_curve, upper_curve
from racecoach.harness.config import ExperimentConfig
from racecoach.harness.loop import LOG_COLUMNS
from racecoach.harness.protocol import read_results, run_protocol
from racecoach.harness.trial import simulate
from racecoach.haptics import gains_for_level
from racecoach.scoring import (ScoringConfig, Termination, completion_percentage, metric_score,
                               projected_lap_time, projected_violation_area, racing_score)
from racecoach.vehicle import PLANT_DT, VehicleControls, VehicleParams, VehicleState, step_plant, tire_forces

from test_autonomy import _random_problem, state_at

COL = {c: i for i, c in enumerate(LOG_COLUMNS)}
VP = VehicleParams()


def test_criterion_01_fading_curves(verdict):
    t0 = time.perf_counter()
    anchors = (nominal_curve(12), upper_curve(14.5), lower_curve(12)) == (50.0, 50.0, 35.0)
    ordered = all(lower_curve(K) <= nominal_curve(K) <= upper_curve(K) for K in range(1, 31))
    state = FadingState()
    levels = [state.L]
    while state.K < 24:
        levels.append(next_level(state, 100.0))
    zero_by_24 = levels[-1] == 0.0
    first_zero = next(k for k, v in enumerate(levels, start=1) if v == 0.0)
    elapsed = time.perf_counter() - t0
    ok = anchors and ordered and zero_by_24 and elapsed < 1.0
    verdict(1, ok, f"anchors={anchors} ordered={ordered} perfect run hits 0 at K={first_zero} "
                   f"({elapsed * 1e3:.1f} ms)")
    assert ok


def test_criterion_02_fading_clamps(verdict):
    got = (delta_level(100), delta_level(40), delta_level(90))
    ok = got == (-15.0, 25.0, 0.0)
    verdict(2, ok, f"dL(100, 40, 90) = {got}")
    assert ok


def test_criterion_03_scoring(verdict):
    cfg = ScoringConfig(T_best=100.0, T_worst=200.0, T_mpc=110.0)
    checks = {
        "p_l midway": completion_percentage(400.0, 800.0) == 0.5,
        "T_l 132": math.isclose(projected_lap_time(60.0, 400.0, cfg, T_mpc_at_sf=50.0), 132.0,
                                rel_tol=0, abs_tol=1e-12),
        "A_B 20": projected_violation_area(10.0, 0.5, cfg) == 20.0,
        "metric": (metric_score(100, 100, 200), metric_score(200, 100, 200),
                   metric_score(150, 100, 200)) == (100.0, 0.0, 50.0),
        "S_R 37": racing_score(0.5, 80.0, 60.0) == 37.0,
    }
    rng = np.random.default_rng(2024)
    mono = True
    for _ in range(10_000):
        p, p2 = np.sort(rng.uniform(0, 1, 2))
        t, t2 = np.sort(rng.uniform(80, 260, 2))
        a, a2 = np.sort(rng.uniform(0, 600, 2))
        s = racing_score(p, metric_score(t, 100, 200), metric_score(a, 0, 500))
        mono &= racing_score(p2, metric_score(t, 100, 200), metric_score(a, 0, 500)) >= s
        mono &= racing_score(p, metric_score(t2, 100, 200), metric_score(a, 0, 500)) <= s
        mono &= racing_score(p, metric_score(t, 100, 200), metric_score(a2, 0, 500)) <= s
    checks["monotone 1e4"] = bool(mono)
    ok = all(checks.values())
    verdict(3, ok, " ".join(f"{k}={v}" for k, v in checks.items()))
    assert ok


def test_criterion_04_torque_blend(stack, verdict):
    t0 = time.perf_counter()
    driver = DriverParams(skill=0.2, noise_sigma=0.6, seed=8)
    plain = simulate(stack, level=100.0, log_stride=1)
    pushed = simulate(stack, level=100.0, driver=driver, seed=8, log_stride=1)
    traj = [COL[c] for c in ("t", "x", "y", "u_x", "u_y", "r", "delta_w")]
    identical = (plain.log.shape == pushed.log.shape
                 and np.array_equal(plain.log[:, traj], pushed.log[:, traj]))
    driver_active = bool(np.any(pushed.log[:, COL["tau_h"]] != 0.0))
    full = pushed.log
    tau_s = full[:, COL["tau_sc"]] + full[:, COL["tau_h"]]
    authority = np.max(np.abs(tau_s - full[:, COL["tau_pid"]]))
    low = simulate(stack, level=0.0, driver=DriverParams(skill=1.0, noise_sigma=0.0, reaction_delay=0.0),
                   seed=0, log_stride=1)
    passthrough = np.array_equal(low.log[:, COL["tau_sc"]], low.log[:, COL["tau_c"]])
    g = np.array([gains_for_level(v).as_tuple() for v in np.round(np.arange(10001) * 0.01, 2)])
    jump = float(np.abs(np.diff(g, axis=0)).max())
    elapsed = time.perf_counter() - t0
    ok = identical and driver_active and authority < 1e-12 and passthrough and jump < 1e-3 \
        and elapsed < 10.0
    verdict(4, ok, f"L=100 trajectory identical={identical} |tau_s-tau_PID|max={authority:.1e} "
                   f"L=0 tau_sc==tau_c={passthrough} max gain step={jump:.2e} ({elapsed:.1f} s)")
    assert ok


def test_criterion_05_mpc_numerics(stack, straight, verdict):
    t0 = time.perf_counter()
    circuit = stack.track
    rng = np.random.default_rng(5)
    h = 1e-6
    worst = {"envelope": 0.0, "speed": 0.0, "go": 0.0}
    for _ in range(100):
        nlp, z = _random_problem(circuit, rng)
        for term in worst:
            g = nlp.cost_gradient(z, terms=(term,))
            fd = np.empty_like(z)
            for i in range(z.size):
                zp = z.copy()
                zm = z.copy()
                zp[i] += h
                zm[i] -= h
                fd[i] = (nlp.term(term, zp) - nlp.term(term, zm)) / (2 * h)
            worst[term] = max(worst[term], np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8))

    # feasibility of plans returned along an autonomy lap segment
    captured = []
    orig = planner_mod.solve

    def spy(nlp, *a, **kw):
        plan = orig(nlp, *a, **kw)
        captured.append((nlp, plan))
        return plan

    planner_mod.solve = spy
    try:
        simulate(stack, level=100.0, finish_station=450.0)
    finally:
        planner_mod.solve = orig
    box = ineq = 0.0
    n_opt = 0
    for nlp, plan in captured:
        if plan.status is not SolveStatus.OPTIMAL:
            continue
        n_opt += 1
        z = np.hstack([plan.states, plan.controls])
        z[:, 0] -= nlp.initial.x
        z[:, 1] -= nlp.initial.y
        lb, ub = (b.reshape(z.shape) for b in nlp.bounds())
        box = max(box, np.max(np.where(np.isfinite(lb), lb - z, -np.inf)),
                  np.max(np.where(np.isfinite(ub), z - ub, -np.inf)))
        # rows: steering rate (both signs) and the front/rear friction ellipses
        ineq = max(ineq, np.max(nlp.constraints(z)[1]))

    plan = solve(build_ocp(state_at(straight, 20.0, speed=20.0), straight, stack.mpc))
    sym = float(np.max(np.abs(plan.controls[:, 0])))
    elapsed = time.perf_counter() - t0
    grad_ok = all(v < 1e-5 for v in worst.values())
    ok = grad_ok and box <= 1e-6 and ineq <= 1e-6 and sym < 1e-3 and elapsed < 120.0
    verdict(5, ok, "gradient rel err " + " ".join(f"{k}={v:.1e}" for k, v in worst.items())
            + f"; {n_opt} plans box viol={max(box, 0):.1e} rate/ellipse viol={max(ineq, 0):.1e};"
            f" straight |delta_ref|={sym:.1e} ({elapsed:.0f} s)")
    assert ok


def test_criterion_06_autonomy_lap(stack, verdict):
    t0 = time.perf_counter()
    a = simulate(stack, level=100.0, log_stride=1)
    elapsed = time.perf_counter() - t0
    b = simulate(stack, level=100.0, log_stride=1)
    exact = np.array_equal(a.log, b.log) and a.time == b.time
    ok = (a.termination is Termination.FINISHED and a.max_speed <= 27.6 and a.tracking_rms < 0.02
          and a.area < 5.0 and exact and elapsed < 300.0)
    verdict(6, ok, f"{a.termination.value} T={a.time:.3f} s max u_x={a.max_speed:.2f} "
                   f"RMS={a.tracking_rms:.4f} rad area={a.area:.2f} m2 bit-exact={exact} "
                   f"({elapsed:.1f} s)")
    assert ok


def test_criterion_07_offtrack_recovery(stack, verdict):
    track = stack.track
    results = []
    for s0, side in ((30.0, 1), (30.0, -1), (300.0, 1)):
        wl, wr = track.widths_at(s0)
        e0 = side * ((wl if side > 0 else wr) + 3.0)
        init = stack.start_state(s0, e_lat=e0, speed=10.0)
        r = simulate(stack, level=100.0, initial=init, start_station=s0, finish_station=s0 + 200.0,
                     log_stride=1)
        s = r.log[:, COL["s"]]
        e = r.log[:, COL["e_lat"]]
        inside = [i for i in range(s.size)
                  if min(track.widths_at(s[i])[0] - e[i], track.widths_at(s[i])[1] + e[i]) >= 0.0]
        back = s[inside[0]] - s[0] if inside else math.inf
        results.append((s0, side, r.termination, back))
    ok = all(t is Termination.FINISHED and back <= 150.0 for _, _, t, back in results)
    verdict(7, ok, "; ".join(f"s={s0:.0f} {'left' if side > 0 else 'right'}: {t.value}, "
                             f"back on track after {back:.1f} m" for s0, side, t, back in results))
    assert ok


def test_criterion_08_vehicle(verdict):
    rng = np.random.default_rng(8)
    n = 100_000
    worst = 0.0
    load = True
    for ux, uy, r, dw, ax in zip(rng.uniform(0, 35, n), rng.uniform(-10, 10, n), rng.uniform(-2, 2, n),
                                 rng.uniform(-7, 7, n), rng.uniform(VP.a_x_min, VP.a_x_max, n)):
        f = tire_forces(VehicleState(u_x=ux, u_y=uy, r=r), VehicleControls(dw, ax), VP)
        worst = max(worst, math.hypot(f.F_xf, f.F_yf) / (VP.mu_f * f.F_zf),
                    math.hypot(f.F_xr, f.F_yr) / (VP.mu_r * f.F_zr))
        load &= f.F_zf + f.F_zr == VP.m * VP.g

    def run(start, sign, dt, duration=5.0):
        st = start
        for i in range(int(round(duration / dt))):
            t = math.floor(i * dt / PLANT_DT + 1e-9) * PLANT_DT
            st = step_plant(st, VehicleControls(sign * 0.6 * math.sin(1.5 * t), 0.3), VP, dt)
        return st

    start = VehicleState(u_x=18.0, u_y=0.2, r=0.05)
    a = run(start, 1.0, PLANT_DT)
    mirror = float(np.max(np.abs(run(start.mirrored(), -1.0, PLANT_DT).as_array() - a.mirrored().as_array())))
    halving = float(np.max(np.abs(run(start, 1.0, PLANT_DT / 2).as_array() - a.as_array())))
    ok = worst <= 1.0 + 1e-9 and load and mirror < 1e-9 and halving < 1e-4
    verdict(8, ok, f"max ellipse utilisation={worst:.9f} load exact={load} "
                   f"mirror diff={mirror:.1e} RK4 halving diff={halving:.1e}")
    assert ok


@pytest.fixture(scope="module")
def protocol_runs(tmp_path_factory):
    out = []
    for k in range(2):
        cfg = ExperimentConfig(subjects=4, seed=2024, output=tmp_path_factory.mktemp(f"session{k}"))
        t0 = time.perf_counter()
        summary, _ = run_protocol(cfg)
        out.append((cfg, summary, time.perf_counter() - t0))
    return out


def test_criterion_09_protocol(protocol_runs, verdict):
    (cfg, _, t1), (cfg2, _, t2) = protocol_runs
    rows = read_results(cfg.output / "results.csv")
    testing_zero = all(r.L == 0.0 for r in rows if r.phase in ("pre", "post"))
    same = all((cfg.output / name).read_bytes() == (cfg2.output / name).read_bytes()
               for name in ("results.csv", "summary.json", "training_curves.csv"))
    ok = len(rows) == 492 and testing_zero and same and max(t1, t2) < 1800.0
    verdict(9, ok, f"rows={len(rows)} testing rows at L=0: {testing_zero} byte-identical={same} "
                   f"runtime {t1:.0f} s / {t2:.0f} s")
    assert ok


def test_criterion_10_fading_beats_full_assist(protocol_runs, verdict):
    summary = protocol_runs[0][1]
    fading = summary.metric("fading", "post").mean_score
    full = summary.metric("full_assist", "post").mean_score
    self_ = summary.metric("self_learning", "post").mean_score
    # non-gating: synthetic drivers, reported only
    verdict(10, fading > full, f"post-training mean S_R (synthetic drivers): fading={fading:.2f} "
                               f"full_assist={full:.2f} self_learning={self_:.2f}")
