"""Compiled single-track vehicle model.

State vector ``(x, y, psi, u_x, u_y, r)``; controls ``(delta_w, a_x)``.  The
model inputs that the force model actually depends on are gathered in
``v = (psi, u_x, u_y, r, delta_w, a_x)`` and every Jacobian below is taken
with respect to ``v``.
"""

import math

import numpy as np
from numba import njit

# parameter vector layout
P_M, P_IZ, P_A, P_B, P_H, P_CF, P_CR, P_MUF, P_MUR, P_RATIO, P_G, P_USTAB, P_FXCAP = range(13)
N_PARAMS = 13

# indices into v
V_PSI, V_UX, V_UY, V_R, V_DW, V_AX = range(6)


@njit(cache=True)
def _fiala(c, fmax, t):
    """Brush-model lateral force for slip ``t = tan(alpha)``.

    Returns ``(force, dF/dt, dF/dfmax, sigma)`` where ``sigma`` is the
    normalized slip (|sigma| = 1 at the onset of full sliding).
    """
    sigma = c * t / (3.0 * fmax)
    a = abs(sigma)
    if a < 1.0:
        phi = 3.0 * sigma - 3.0 * sigma * a + sigma * sigma * sigma
        dphi = 3.0 * (1.0 - a) * (1.0 - a)
    else:
        phi = 1.0 if sigma > 0 else -1.0
        dphi = 0.0
    force = -fmax * phi
    df_dsigma = -fmax * dphi
    df_dt = df_dsigma * c / (3.0 * fmax)
    df_dfmax = -phi - df_dsigma * sigma / fmax
    return force, df_dt, df_dfmax, sigma


BRAKE_BLEND = 0.25  # m/s^2, width of the drive/brake hand-over


@njit(cache=True)
def _longitudinal(ax, fz, dfz, mu, cap, m, g, front):
    """Axle longitudinal force: braking split by load, drive on the rear.

    The hand-over between the two distributions is a tanh blend of width
    ``BRAKE_BLEND`` so the force is smooth in ``ax``; the axle sum is always
    exactly ``m * ax``.
    """
    th = math.tanh(ax / BRAKE_BLEND)
    sb = 0.5 * (1.0 - th)
    dsb = -0.5 * (1.0 - th * th) / BRAKE_BLEND
    fx = ax * fz / g * sb
    dfx = (fz + ax * dfz) / g * sb + ax * fz / g * dsb
    if not front:
        fx += m * ax * (1.0 - sb)
        dfx += m * (1.0 - sb) - m * ax * dsb
    lim = cap * mu * fz
    if fx > lim:
        fx = lim
        dfx = cap * mu * dfz
    elif fx < -lim:
        fx = -lim
        dfx = -cap * mu * dfz
    return fx, dfx


@njit(cache=True)
def forces(v, p, out, jac):
    """Tire forces and their derivatives.

    ``out`` receives ``(F_yf, F_yr, F_xf, F_xr, F_zf, F_zr, util2_f, util2_r)``
    where ``util2`` is the squared combined-slip utilization
    ``(F_x/(mu F_z))^2 + (C tan(alpha)/(3 mu F_z))^2`` (1 at the friction limit).
    ``jac`` (8 x 6) receives d out / d v.
    """
    m = p[P_M]
    a = p[P_A]
    b = p[P_B]
    h = p[P_H]
    cf = p[P_CF]
    cr = p[P_CR]
    muf = p[P_MUF]
    mur = p[P_MUR]
    ratio = p[P_RATIO]
    g = p[P_G]
    ustab = p[P_USTAB]
    cap = p[P_FXCAP]
    wb = a + b

    ux = v[V_UX]
    uy = v[V_UY]
    r = v[V_R]
    delta = v[V_DW] / ratio
    ax = v[V_AX]

    fzf = m * (g * b - ax * h) / wb
    dfzf = -m * h / wb
    fzr = m * g - fzf
    dfzr = -dfzf

    fxf, dfxf = _longitudinal(ax, fzf, dfzf, muf, cap, m, g, True)
    fxr, dfxr = _longitudinal(ax, fzr, dfzr, mur, cap, m, g, False)

    rhof = fxf / (muf * fzf)
    drhof = (dfxf * fzf - fxf * dfzf) / (muf * fzf * fzf)
    rhor = fxr / (mur * fzr)
    drhor = (dfxr * fzr - fxr * dfzr) / (mur * fzr * fzr)
    zf = math.sqrt(1.0 - rhof * rhof)
    dzf = -rhof * drhof / zf
    zr = math.sqrt(1.0 - rhor * rhor)
    dzr = -rhor * drhor / zr
    fmaxf = zf * muf * fzf
    dfmaxf = muf * (dzf * fzf + zf * dfzf)
    fmaxr = zr * mur * fzr
    dfmaxr = mur * (dzr * fzr + zr * dfzr)

    if ux > ustab:
        vel = ux
        dvel = 1.0
    else:
        vel = ustab
        dvel = 0.0

    qf = uy + a * r
    pf = qf / vel
    kf = 1.0 / (1.0 + pf * pf)
    alf = math.atan(pf) - delta
    tf = math.tan(alf)
    dtf = 1.0 + tf * tf
    # d alpha_f / d (ux, uy, r, delta_w)
    daf_ux = -kf * qf / (vel * vel) * dvel
    daf_uy = kf / vel
    daf_r = kf * a / vel
    daf_dw = -1.0 / ratio

    qr = uy - b * r
    pr = qr / vel
    kr = 1.0 / (1.0 + pr * pr)
    tr = pr  # tan(atan(pr))
    dtr = 1.0 + tr * tr
    dar_ux = -kr * qr / (vel * vel) * dvel
    dar_uy = kr / vel
    dar_r = -kr * b / vel

    fyf, dyf_dt, dyf_dfm, sf = _fiala(cf, fmaxf, tf)
    fyr, dyr_dt, dyr_dfm, sr = _fiala(cr, fmaxr, tr)

    out[0] = fyf
    out[1] = fyr
    out[2] = fxf
    out[3] = fxr
    out[4] = fzf
    out[5] = fzr
    lf = cf * tf / (3.0 * muf * fzf)
    lr = cr * tr / (3.0 * mur * fzr)
    out[6] = rhof * rhof + lf * lf
    out[7] = rhor * rhor + lr * lr

    for i in range(8):
        for j in range(6):
            jac[i, j] = 0.0
    gf = dyf_dt * dtf
    jac[0, V_UX] = gf * daf_ux
    jac[0, V_UY] = gf * daf_uy
    jac[0, V_R] = gf * daf_r
    jac[0, V_DW] = gf * daf_dw
    jac[0, V_AX] = dyf_dfm * dfmaxf
    gr = dyr_dt * dtr
    jac[1, V_UX] = gr * dar_ux
    jac[1, V_UY] = gr * dar_uy
    jac[1, V_R] = gr * dar_r
    jac[1, V_AX] = dyr_dfm * dfmaxr
    jac[2, V_AX] = dfxf
    jac[3, V_AX] = dfxr
    jac[4, V_AX] = dfzf
    jac[5, V_AX] = dfzr
    # utilization
    glf = 2.0 * lf * cf / (3.0 * muf * fzf) * dtf
    jac[6, V_UX] = glf * daf_ux
    jac[6, V_UY] = glf * daf_uy
    jac[6, V_R] = glf * daf_r
    jac[6, V_DW] = glf * daf_dw
    jac[6, V_AX] = 2.0 * rhof * drhof - 2.0 * lf * lf * dfzf / fzf
    glr = 2.0 * lr * cr / (3.0 * mur * fzr) * dtr
    jac[7, V_UX] = glr * dar_ux
    jac[7, V_UY] = glr * dar_uy
    jac[7, V_R] = glr * dar_r
    jac[7, V_AX] = 2.0 * rhor * drhor - 2.0 * lr * lr * dfzr / fzr
    return sf, sr


@njit(cache=True)
def derivatives(v, p, f, jf, fo, jfo):
    """State derivative ``f`` (6) and ``jf = df/dv`` (6 x 6).

    ``fo``/``jfo`` are work arrays of shape (8,) and (8, 6) that are left
    holding the tire-force outputs of :func:`forces`.
    """
    m = p[P_M]
    iz = p[P_IZ]
    a = p[P_A]
    b = p[P_B]
    ratio = p[P_RATIO]
    forces(v, p, fo, jfo)
    fyf = fo[0]
    fyr = fo[1]
    fxf = fo[2]
    fxr = fo[3]

    psi = v[V_PSI]
    ux = v[V_UX]
    uy = v[V_UY]
    r = v[V_R]
    delta = v[V_DW] / ratio
    cd = math.cos(delta)
    sd = math.sin(delta)
    cp = math.cos(psi)
    sp = math.sin(psi)

    flat = fyf * cd + fxf * sd
    flon = fxf * cd - fyf * sd

    f[0] = ux * cp - uy * sp
    f[1] = ux * sp + uy * cp
    f[2] = r
    f[3] = (fxr + flon) / m + r * uy
    f[4] = (flat + fyr) / m - r * ux
    f[5] = (a * flat - b * fyr) / iz

    for i in range(6):
        for j in range(6):
            jf[i, j] = 0.0
    jf[0, V_PSI] = -ux * sp - uy * cp
    jf[0, V_UX] = cp
    jf[0, V_UY] = -sp
    jf[1, V_PSI] = ux * cp - uy * sp
    jf[1, V_UX] = sp
    jf[1, V_UY] = cp
    jf[2, V_R] = 1.0
    for j in range(1, 6):
        dfyf = jfo[0, j]
        dfyr = jfo[1, j]
        dfxf = jfo[2, j]
        dfxr = jfo[3, j]
        dflat = dfyf * cd + dfxf * sd
        dflon = dfxf * cd - dfyf * sd
        if j == V_DW:
            dflat += (-fyf * sd + fxf * cd) / ratio
            dflon += (-fxf * sd - fyf * cd) / ratio
        jf[3, j] = (dfxr + dflon) / m
        jf[4, j] = (dflat + dfyr) / m
        jf[5, j] = (a * dflat - b * dfyr) / iz
    jf[3, V_R] += uy
    jf[3, V_UY] += r
    jf[4, V_R] -= ux
    jf[4, V_UX] -= r


@njit(cache=True)
def state_derivative(state, dw, ax, p, out, v, jf, fo, jfo):
    v[0] = state[2]
    v[1] = state[3]
    v[2] = state[4]
    v[3] = state[5]
    v[4] = dw
    v[5] = ax
    derivatives(v, p, out, jf, fo, jfo)


@njit(cache=True)
def rk4_step(state, dw, ax, p, dt, out):
    """One RK4 step of the plant; ``u_x`` is clamped at zero afterwards."""
    v = np.empty(6)
    jf = np.empty((6, 6))
    fo = np.empty(8)
    jfo = np.empty((8, 6))
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    state_derivative(state, dw, ax, p, k1, v, jf, fo, jfo)
    for i in range(6):
        tmp[i] = state[i] + 0.5 * dt * k1[i]
    state_derivative(tmp, dw, ax, p, k2, v, jf, fo, jfo)
    for i in range(6):
        tmp[i] = state[i] + 0.5 * dt * k2[i]
    state_derivative(tmp, dw, ax, p, k3, v, jf, fo, jfo)
    for i in range(6):
        tmp[i] = state[i] + dt * k3[i]
    state_derivative(tmp, dw, ax, p, k4, v, jf, fo, jfo)
    for i in range(6):
        out[i] = state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    if out[3] < 0.0:
        out[3] = 0.0


@njit(cache=True)
def simulate(state, dw, ax, p, dt, steps, out):
    """``steps`` RK4 steps with constant controls."""
    cur = state.copy()
    nxt = np.empty(6)
    for _ in range(steps):
        rk4_step(cur, dw, ax, p, dt, nxt)
        cur[:] = nxt
    out[:] = cur
