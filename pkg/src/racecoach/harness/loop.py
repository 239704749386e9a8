"""Compiled 500 Hz inner loop: plan interpolation, torques, wheel, plant, scoring."""

import math

import numpy as np
from numba import njit

from racecoach import _dynamics as dyn
from racecoach.driver import driver_step
from racecoach.haptics import H_SCMAX, blend, pid_update, wheel_update
from racecoach.scoring import FAULT, FINISHED, RUNNING, area_increment, termination_code
from racecoach.track import project_climb

# accumulator layout
A_T, A_S, A_HINT, A_AREA, A_TCF, A_TSC, A_SQERR, A_NERR, A_MAXUX, A_DL, A_DR, A_STEP, A_NLOG, A_E = range(14)
N_ACC = 14

# log columns
LOG_COLUMNS = ("t", "s", "e_lat", "x", "y", "u_x", "u_y", "r", "delta_w", "delta_ref",
               "tau_h", "tau_pid", "tau_c", "tau_ch", "tau_sc", "a_x")
N_LOG = len(LOG_COLUMNS)

# loop constants layout
K_DT, K_TCA, K_TRAIL, K_DWMAX, K_AXMIN, K_AXMAX, K_FINISH, K_DRIVER, K_STRIDE = range(9)
N_CONST = 9


@njit(cache=True)
def _interp_plan(tau, times, ctrl, col):
    n = times.size
    if tau <= times[0]:
        return ctrl[0, col]
    if tau >= times[n - 1]:
        return ctrl[n - 1, col]
    h = times[1] - times[0]
    i = int(tau / h)
    if i > n - 2:
        i = n - 2
    u = (tau - times[i]) / (times[i + 1] - times[i])
    return ctrl[i, col] + u * (ctrl[i + 1, col] - ctrl[i, col])


@njit(cache=True)
def advance(steps, state, wheel, pid, dstate, ring, noise, plan_t0, plan_times, plan_ctrl,
            alpha, beta, gamma, hp, p, dp, limits, consts, acc, log,
            closed, ts, xs, ys, tx, ty, seg_len, wl, wr, kappa):
    """Run up to ``steps`` plant steps; returns a scoring termination code.

    All state arrays are updated in place so consecutive calls continue the run.
    """
    dt = consts[K_DT]
    v = np.empty(6)
    fo = np.empty(8)
    jfo = np.empty((8, 6))
    nxt = np.empty(6)
    driver_on = consts[K_DRIVER] != 0.0
    stride = int(consts[K_STRIDE])
    for i in range(steps):
        t = acc[A_T]
        tau = t - plan_t0
        dref = _interp_plan(tau, plan_times, plan_ctrl, 0)
        ax = _interp_plan(tau, plan_times, plan_ctrl, 1)
        if ax < consts[K_AXMIN]:
            ax = consts[K_AXMIN]
        elif ax > consts[K_AXMAX]:
            ax = consts[K_AXMAX]

        # road alignment torque from the current front lateral force
        v[0] = state[2]
        v[1] = state[3]
        v[2] = state[4]
        v[3] = state[5]
        v[4] = wheel[0]
        v[5] = ax
        dyn.forces(v, p, fo, jfo)
        raw_c = -consts[K_TRAIL] * fo[0] / p[dyn.P_RATIO]
        acc[A_TCF] += consts[K_TCA] * (raw_c - acc[A_TCF])
        tau_c = acc[A_TCF]

        if driver_on:
            tau_h, _ = driver_step(state, acc[A_S], wheel, dp, dstate, ring, noise[i],
                                   acc[A_TSC], dt, closed, ts, xs, ys, kappa, wl, wr)
        else:
            tau_h = 0.0
        tau_pid = pid_update(dref - wheel[0], pid, hp, dt)
        tau_sc, net = blend(alpha, beta, gamma, tau_pid, tau_c, tau_h, hp[H_SCMAX])
        acc[A_TSC] = tau_sc
        wheel_update(wheel, net, hp, dt)

        dw = wheel[0]
        if dw > consts[K_DWMAX]:
            dw = consts[K_DWMAX]
        elif dw < -consts[K_DWMAX]:
            dw = -consts[K_DWMAX]
        dyn.rk4_step(state, dw, ax, p, dt, nxt)
        finite = True
        for j in range(6):
            if not math.isfinite(nxt[j]):
                finite = False
        if not finite:
            return FAULT
        for j in range(6):
            state[j] = nxt[j]
        acc[A_T] = t + dt
        acc[A_STEP] += 1.0

        idx, station, e, dl, dr, _, _, _ = project_climb(
            state[0], state[1], int(acc[A_HINT]), closed, ts, xs, ys, tx, ty, seg_len, wl, wr)
        acc[A_AREA] += area_increment(min(dl, dr), station - acc[A_S])
        acc[A_S] = station
        acc[A_HINT] = idx
        acc[A_DL] = dl
        acc[A_DR] = dr
        acc[A_E] = e
        err = wheel[0] - dref
        acc[A_SQERR] += err * err
        acc[A_NERR] += 1.0
        if state[3] > acc[A_MAXUX]:
            acc[A_MAXUX] = state[3]

        if stride > 0 and int(acc[A_STEP]) % stride == 0:
            k = int(acc[A_NLOG])
            if k < log.shape[0]:
                log[k, 0] = acc[A_T]
                log[k, 1] = station
                log[k, 2] = e
                log[k, 3] = state[0]
                log[k, 4] = state[1]
                log[k, 5] = state[3]
                log[k, 6] = state[4]
                log[k, 7] = state[5]
                log[k, 8] = wheel[0]
                log[k, 9] = dref
                log[k, 10] = tau_h
                log[k, 11] = tau_pid
                log[k, 12] = tau_c
                log[k, 13] = -tau_h
                log[k, 14] = tau_sc
                log[k, 15] = ax
                acc[A_NLOG] = k + 1

        code = termination_code(state[5], state[4], dl, dr, limits)
        if code != RUNNING:
            return code
        if station >= consts[K_FINISH]:
            return FINISHED
    return RUNNING
