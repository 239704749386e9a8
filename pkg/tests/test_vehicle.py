import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from racecoach.vehicle import (PLANT_DT, SimulationFault, VehicleControls, VehicleParams, VehicleState,
                               derivatives, kinetic_energy, load_params, save_params,
                               self_aligning_torque, steady_state_cornering, step_plant, tire_forces)

P = VehicleParams()


def simulate(state, steer, ax, duration, dt=PLANT_DT):
    n = int(round(duration / dt))
    out = [state]
    for i in range(n):
        t = i * dt
        state = step_plant(state, VehicleControls(steer(t), ax(t)), P, dt)
        out.append(state)
    return out


def slalom(t):
    return 0.6 * math.sin(1.5 * t)


def test_zero_slip_no_forces():
    f = tire_forces(VehicleState(u_x=15.0), VehicleControls(0.0, 0.0), P)
    assert (f.F_yf, f.F_yr, f.F_xr) == (0.0, 0.0, 0.0)


def test_linear_region():
    # alpha_f = -delta for a straight-running car
    for alpha, tol in ((1e-3, 0.02), (1e-4, 0.002)):
        f = tire_forces(VehicleState(u_x=20.0), VehicleControls(-alpha * P.steering_ratio, 0.0), P)
        assert f.F_yf == pytest.approx(-P.C_f * alpha, rel=tol)


def test_brush_closed_form_at_small_slip():
    alpha = 0.01
    f = tire_forces(VehicleState(u_x=20.0), VehicleControls(-alpha * P.steering_ratio, 0.0), P)
    fmax = P.mu_f * f.F_zf
    t = math.tan(alpha)
    fiala = -P.C_f * t + P.C_f ** 2 / (3 * fmax) * t * abs(t) - P.C_f ** 3 / (27 * fmax ** 2) * t ** 3
    assert f.F_yf == pytest.approx(fiala, rel=1e-12)


def test_full_saturation_plateau():
    state = VehicleState(u_x=5.0, u_y=-60.0)
    f = tire_forces(state, VehicleControls(0.0, 0.0), P)
    assert abs(f.F_yf) == pytest.approx(P.mu_f * f.F_zf, rel=1e-9)
    braking = tire_forces(state, VehicleControls(0.0, -4.0), P)
    avail = math.sqrt((P.mu_f * braking.F_zf) ** 2 - braking.F_xf ** 2)
    assert abs(braking.F_yf) == pytest.approx(avail, rel=1e-9)
    assert abs(braking.F_yf) < P.mu_f * braking.F_zf


def test_straight_equilibrium():
    d = derivatives(VehicleState(u_x=12.0), VehicleControls(0.0, 0.0), P)
    assert d[0] == 12.0
    assert np.all(d[1:] == 0.0)


def test_rest_is_fixed_point():
    s = VehicleState(x=3.0, y=-2.0, psi=0.4)
    assert step_plant(s, VehicleControls(), P) == s


def test_constant_acceleration_from_rest():
    end = simulate(VehicleState(), lambda t: 0.0, lambda t: 2.0, 1.0)[-1]
    assert end.u_x == pytest.approx(2.0, abs=0.01)


def test_steady_circle():
    state, controls = steady_state_cornering(15.0, 1.0 / 60.0, P)
    d = derivatives(state, controls, P)
    assert abs(d[4]) < 1e-6 and abs(d[5]) < 1e-6


def test_aligning_torque():
    assert self_aligning_torque(VehicleState(u_x=15.0), VehicleControls(), P) == 0.0
    # positive road-wheel angle gives negative front slip; torque pushes the wheel back
    assert self_aligning_torque(VehicleState(u_x=15.0), VehicleControls(0.2, 0.0), P) < 0.0
    assert self_aligning_torque(VehicleState(u_x=15.0), VehicleControls(-0.2, 0.0), P) > 0.0
    state, controls = steady_state_cornering(20.0, 0.3 * P.g / 20.0 ** 2, P)
    assert 0.5 <= abs(self_aligning_torque(state, controls, P)) <= 8.0


def test_friction_ellipse_random():
    rng = np.random.default_rng(7)
    worst = 0.0
    n = 100_000
    ux = rng.uniform(0.0, 35.0, n)
    uy = rng.uniform(-10.0, 10.0, n)
    r = rng.uniform(-2.0, 2.0, n)
    dw = rng.uniform(-P.delta_w_max, P.delta_w_max, n)
    ax = rng.uniform(P.a_x_min, P.a_x_max, n)
    for i in range(n):
        f = tire_forces(VehicleState(u_x=ux[i], u_y=uy[i], r=r[i]), VehicleControls(dw[i], ax[i]), P)
        worst = max(worst, math.hypot(f.F_xf, f.F_yf) / (P.mu_f * f.F_zf),
                    math.hypot(f.F_xr, f.F_yr) / (P.mu_r * f.F_zr))
    assert worst <= 1.0 + 1e-9


@settings(max_examples=300, deadline=None)
@given(st.floats(P.a_x_min, P.a_x_max), st.floats(0.0, 40.0), st.floats(-5.0, 5.0))
def test_normal_load_conserved(ax, ux, uy):
    f = tire_forces(VehicleState(u_x=ux, u_y=uy), VehicleControls(0.1, ax), P)
    assert f.F_zf + f.F_zr == P.m * P.g


def test_energy_non_increasing_when_coasting():
    states = simulate(VehicleState(u_x=20.0), slalom, lambda t: 0.0, 3.0)
    ke = np.array([kinetic_energy(s, P) for s in states])
    assert np.all(np.diff(ke) <= 1e-9 * ke[0])


def test_mirror_symmetry():
    start = VehicleState(u_x=18.0, u_y=0.3, r=0.05)
    a = simulate(start, slalom, lambda t: 0.5, 3.0)
    b = simulate(start.mirrored(), lambda t: -slalom(t), lambda t: 0.5, 3.0)
    for sa, sb in zip(a, b):
        np.testing.assert_allclose(sb.as_array(), sa.mirrored().as_array(), rtol=0, atol=1e-9)


def test_step_halving():
    # inputs held on the coarse grid so only the integration error differs
    def held(t):
        return slalom(math.floor(t / PLANT_DT + 1e-9) * PLANT_DT)

    start = VehicleState(u_x=18.0)
    coarse = simulate(start, held, lambda t: 0.3, 5.0, dt=PLANT_DT)[-1]
    fine = simulate(start, held, lambda t: 0.3, 5.0, dt=PLANT_DT / 2)[-1]
    assert np.max(np.abs(coarse.as_array() - fine.as_array())) < 1e-4


def test_nan_raises_fault():
    with pytest.raises(SimulationFault) as err:
        step_plant(VehicleState(u_x=float("nan")), VehicleControls(), P)
    assert err.value.last_state.u_x != err.value.last_state.u_x


def test_params_file_round_trip(tmp_path):
    p = tmp_path / "v.txt"
    save_params(replace(P, m=1800.0), p)
    assert load_params(p).m == 1800.0
    p.write_text("mass = 3\n")
    with pytest.raises(ValueError, match="unknown vehicle parameter"):
        load_params(p)
    with pytest.raises(ValueError):
        VehicleParams(mu_f=2.5)
