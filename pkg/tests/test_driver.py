from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from racecoach.driver import (TAU_H_MAX, Driver, DriverParams, driver_torque, intention, learn,
                              learning_discount, load_population, sample_population, save_population)
from racecoach.harness.trial import simulate
from racecoach.haptics import WheelState
from racecoach.scoring import Termination
from racecoach.vehicle import PLANT_DT, VehicleParams, VehicleState

VP = VehicleParams()


class Trial:
    def __init__(self, S_R, L):
        self.S_R = S_R
        self.L = L


def make(track, params, seed=0):
    return Driver(params, track, VP.wheelbase, VP.steering_ratio, PLANT_DT, seed=seed)


def start(track, s=30.0, e=0.5):
    x, y = track.to_world(s, e)
    return np.array([x, y, track.point_at(s)[2], 15.0, 0.0, 0.0])


def test_learn_examples():
    p = DriverParams(skill=0.5, learning_rate=0.1)
    assert learn(p, Trial(80.0, 0.0)).skill == pytest.approx(0.54)
    assert learn(replace(p, learning_rate=0.0), Trial(80.0, 0.0)) == replace(p, learning_rate=0.0)
    assert learn(replace(p, skill=1.0), Trial(80.0, 0.0)).skill == 1.0
    assert learning_discount(100) < learning_discount(35) < learning_discount(0) == 1.0


@given(st.floats(0, 1), st.floats(0, 1), st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), max_size=40))
def test_skill_stays_in_unit_interval(skill, eta, trials):
    p = DriverParams(skill=skill, learning_rate=eta)
    for S, L in trials:
        p = learn(p, Trial(S, L))
        assert 0.0 <= p.skill <= 1.0


def test_satisfied_driver_gives_zero_torque(circuit):
    params = DriverParams(skill=1.0, reaction_delay=0.0)
    st_ = start(circuit)
    station = 30.0
    drv = make(circuit, params)
    _ = drv.torque(st_, station, np.zeros(2))
    cmd = intention(st_, station, drv.dp, circuit.closed, *drv._trk)
    assert make(circuit, params).torque(st_, station, np.array([cmd, 0.0])) == 0.0


def test_full_skill_has_no_noise(circuit):
    params = DriverParams(skill=1.0, noise_sigma=0.7)
    st_ = start(circuit)
    a = [make(circuit, params, seed=1).torque(st_, 30.0, np.zeros(2)) for _ in range(3)]
    drv = make(circuit, params, seed=99)
    b = [drv.torque(st_, 30.0, np.zeros(2)) for _ in range(200)]
    assert drv.state[0] == 0.0
    assert len(set(b)) == 1 and b[0] == a[0]


def test_noise_grows_as_skill_drops(circuit):
    st_ = start(circuit)
    spreads = []
    for skill in (0.9, 0.2):
        drv = make(circuit, DriverParams(skill=skill, reaction_delay=0.0), seed=5)
        spreads.append(np.std([drv.torque(st_, 30.0, np.zeros(2)) for _ in range(2000)]))
    assert spreads[0] < spreads[1]


def test_seeded_torque_is_reproducible(circuit):
    state = VehicleState(*start(circuit))
    p = DriverParams(skill=0.3, seed=4)
    a = driver_torque(state, WheelState(0.1), circuit, p, PLANT_DT, 17, steps=300)
    b = driver_torque(state, WheelState(0.1), circuit, p, PLANT_DT, 17, steps=300)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= TAU_H_MAX)


def test_compliance_softens_opposed_torque(circuit):
    p = DriverParams(skill=1.0, reaction_delay=0.0, compliance=0.4)
    st_ = start(circuit, e=2.0)
    drv = make(circuit, p)
    cmd = intention(st_, 30.0, drv.dp, circuit.closed, *drv._trk)
    wheel = np.array([cmd - 0.05, 0.0])
    free = drv.torque(st_, 30.0, wheel)
    assert free == pytest.approx(p.stiffness * 0.05)
    assert make(circuit, p).torque(st_, 30.0, wheel, tau_assist=-1.0) == pytest.approx(0.6 * free)
    assert make(circuit, p).torque(st_, 30.0, wheel, tau_assist=1.0) == free


def test_contracts():
    for bad in (dict(skill=1.2), dict(noise_sigma=-0.1), dict(seed=-1), dict(compliance=2.0)):
        with pytest.raises(ValueError):
            DriverParams(**bad)


def test_population_round_trip(tmp_path):
    a = sample_population(6, 123)
    assert a == sample_population(6, 123)
    assert a != sample_population(6, 124)
    path = tmp_path / "pop.json"
    save_population(a, path)
    assert '"synthetic": true' in path.read_text()
    assert load_population(path) == a


def test_expert_completes_lap_alone(stack):
    p = DriverParams(skill=1.0, noise_sigma=0.0, reaction_delay=0.0)
    r = simulate(stack, level=0.0, driver=p, seed=0)
    assert r.termination is Termination.FINISHED
