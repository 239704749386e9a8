"""Compiled pieces of the envelope MPC: costs, constraints, KKT assembly and
the primal-dual interior-point iteration.

Decision layout: ``z[k] = (x, y, psi, u_x, u_y, r, delta_w, a_x)`` for nodes
``k = 0..N-1`` with positions relative to the measured position.  Interval
``k >= 1`` uses backward Euler with the control held from node ``k-1``::

    c_k = xi_k - xi_{k-1} - h * f(xi_k, u_{k-1}) = 0

and ``c_0 = xi_0 - xi_meas``.  Per node there are four inequality rows
``g <= 0``: two steering-rate limits and two axle utilization limits (the
latter are inert placeholders at node 0).

The Newton system is ordered node by node as ``[lambda_k (6), z_k (8)]``,
which gives a banded matrix of half-bandwidth 14.
"""

import math

import numpy as np
from numba import njit

from racecoach._dynamics import derivatives
from racecoach.track import project_climb

NX = 6
NZ = 8
NI = 4
BLK = NX + NZ
KL = 14
KU = 14
BAND_W = 2 * KL + KU + 1

# cfgv layout
C_H, C_WUY, C_WR, C_WAX, C_WDD, C_WTUBE, C_THETA, C_GSM, C_WUX, C_VSTAR, C_WGO, \
    C_RATE, C_DMEAS, C_X0, C_Y0, C_SREF, C_GO0, C_GO1, C_GO2, C_GO3 = range(20)
N_CFG = 20

# cost terms
T_STATE, T_CONTROL, T_ENV, T_GO, T_SPEED = range(5)

# status codes
OPTIMAL = 0
MAX_ITER = 1


@njit(cache=True)
def softplus(u):
    if u > 0.0:
        return u + math.log1p(math.exp(-u))
    return math.log1p(math.exp(u))


@njit(cache=True)
def logistic(u):
    if u >= 0.0:
        e = math.exp(-u)
        return 1.0 / (1.0 + e)
    e = math.exp(u)
    return e / (1.0 + e)


# --------------------------------------------------------------------------
# geometry and costs

@njit(cache=True)
def _vertex_tangent(j, closed, tx, ty):
    nseg = tx.size
    if closed:
        a = (j - 1) % nseg
        b = j % nseg
    else:
        a = j - 1 if j > 0 else 0
        b = j if j < nseg else nseg - 1
    vx = tx[a] + tx[b]
    vy = ty[a] + ty[b]
    nrm = math.sqrt(vx * vx + vy * vy)
    return vx / nrm, vy / nrm


@njit(cache=True)
def _hermite(u, x0, x1, m0, m1):
    """Cubic Hermite value, first and second derivative in ``u``."""
    u2 = u * u
    u3 = u2 * u
    c = (2.0 * u3 - 3.0 * u2 + 1.0) * x0 + (u3 - 2.0 * u2 + u) * m0 \
        + (-2.0 * u3 + 3.0 * u2) * x1 + (u3 - u2) * m1
    d1 = (6.0 * u2 - 6.0 * u) * (x0 - x1) + (3.0 * u2 - 4.0 * u + 1.0) * m0 \
        + (3.0 * u2 - 2.0 * u) * m1
    d2 = (12.0 * u - 6.0) * (x0 - x1) + (6.0 * u - 4.0) * m0 + (6.0 * u - 2.0) * m1
    return c, d1, d2


@njit(cache=True)
def _foot_slope(c1x, c1y, c2x, c2y, qx, qy):
    # d/du of (p - c).c'; near the centre of curvature it loses its sign,
    # fall back to the Gauss-Newton slope there
    g = c1x * c1x + c1y * c1y
    fu = -g + qx * c2x + qy * c2y
    return fu if fu < -0.1 * g else -g


@njit(cache=True)
def smooth_frame(px, py, idx, closed, s, xs, ys, tx, ty, seg_len, wl, wr):
    """Station frame on a C1 reading of the polyline centerline.

    Each segment is replaced by the cubic Hermite curve through its end
    points with the averaged vertex tangents, and ``p`` is projected onto
    that curve.  Unlike nearest-segment projection this has no vertex
    wedges or normal jumps, so station and boundary distances have
    continuous gradients (the curve departs from the polyline by the
    sagitta, millimetres at the sample spacing).  Returns ``(idx, station,
    d_left, dl/dx, dl/dy, d_right, dr/dx, dr/dy, ds/dx, ds/dy)``.
    """
    nseg = xs.size - 1
    u = 0.0
    i = 0
    cx = cy = c1x = c1y = c2x = c2y = 0.0
    fu = -1.0
    for _ in range(4):
        i = idx % nseg if closed else idx
        ln = seg_len[i]
        n0x, n0y = _vertex_tangent(i, closed, tx, ty)
        n1x, n1y = _vertex_tangent(i + 1, closed, tx, ty)
        m0x = n0x * ln
        m0y = n0y * ln
        m1x = n1x * ln
        m1y = n1y * ln
        u = min(max(((px - xs[i]) * tx[i] + (py - ys[i]) * ty[i]) / ln, -1.0), 2.0)
        for _ in range(4):
            cx, c1x, c2x = _hermite(u, xs[i], xs[i + 1], m0x, m1x)
            cy, c1y, c2y = _hermite(u, ys[i], ys[i + 1], m0y, m1y)
            qx = px - cx
            qy = py - cy
            f = qx * c1x + qy * c1y
            fu = _foot_slope(c1x, c1y, c2x, c2y, qx, qy)
            u = min(max(u - f / fu, -1.0), 2.0)
        cx, c1x, c2x = _hermite(u, xs[i], xs[i + 1], m0x, m1x)
        cy, c1y, c2y = _hermite(u, ys[i], ys[i + 1], m0y, m1y)
        qx = px - cx
        qy = py - cy
        fu = _foot_slope(c1x, c1y, c2x, c2y, qx, qy)
        if u < 0.0 and (closed or idx > 0):
            idx -= 1
        elif u > 1.0 and (closed or idx < nseg - 1):
            idx += 1
        else:
            break
    lap = (idx - i) // nseg if closed else 0
    qx = px - cx
    qy = py - cy
    sp = math.sqrt(c1x * c1x + c1y * c1y)
    tux = c1x / sp
    tuy = c1y / sp
    e = tux * qy - tuy * qx
    # du/dp from the foot-point condition (p - c(u)) . c'(u) = 0
    dux = -c1x / fu
    duy = -c1y / fu
    dot = (c1x * c2x + c1y * c2y) / (sp * sp * sp)
    dtx = c2x / sp - c1x * dot
    dty = c2y / sp - c1y * dot
    de_du = dtx * qy - dty * qx
    ex = -tuy + de_du * dux
    ey = tux + de_du * duy
    ds_seg = s[i + 1] - s[i]
    station = s[i] + u * ds_seg + lap * s[-1]
    left = wl[i] + u * (wl[i + 1] - wl[i])
    right = wr[i] + u * (wr[i + 1] - wr[i])
    dwl = wl[i + 1] - wl[i]
    dwr = wr[i + 1] - wr[i]
    return (idx, station, left - e, dwl * dux - ex, dwl * duy - ey,
            right + e, dwr * dux + ex, dwr * duy + ey, ds_seg * dux, ds_seg * duy)


@njit(cache=True)
def project_nodes(z, cfgv, hints, closed, s, xs, ys, tx, ty, seg_len, wl, wr, env):
    """Per node ``env[k] = (d_left, dx, dy, d_right, dx, dy, station, ds/dx, ds/dy)``."""
    for k in range(z.shape[0]):
        px = z[k, 0] + cfgv[C_X0]
        py = z[k, 1] + cfgv[C_Y0]
        idx = project_climb(px, py, hints[k], closed, s, xs, ys, tx, ty, seg_len, wl, wr)[0]
        (idx, st, dl, dlx, dly, dr, drx, dry, sx, sy) = smooth_frame(
            px, py, idx, closed, s, xs, ys, tx, ty, seg_len, wl, wr)
        hints[k] = idx
        env[k, 0] = dl
        env[k, 1] = dlx
        env[k, 2] = dly
        env[k, 3] = dr
        env[k, 4] = drx
        env[k, 5] = dry
        env[k, 6] = st
        env[k, 7] = sx
        env[k, 8] = sy


@njit(cache=True)
def _tube(cfgv, envk):
    """Envelope penalty with a soft minimum over the two boundaries.

    ``log(1 + exp(a) + exp(b))`` with ``a, b = -theta (g_sm + d)``; equal to
    ``softplus(-theta (g_sm + min(d_l, d_r)))`` up to ``exp(-theta * width)``
    but smooth across the centerline.  Returns the value and the two
    weights ``p_a, p_b`` (value derivative with respect to ``a`` and ``b``).
    """
    th = cfgv[C_THETA]
    a = -th * (cfgv[C_GSM] + envk[0])
    b = -th * (cfgv[C_GSM] + envk[3])
    m = max(a, b, 0.0)
    ea = math.exp(a - m)
    eb = math.exp(b - m)
    e0 = math.exp(-m)
    tot = e0 + ea + eb
    return m + math.log(tot), ea / tot, eb / tot


@njit(cache=True)
def _go_poly(cfgv, env_last):
    sig = env_last[6] - cfgv[C_SREF]
    c1 = cfgv[C_GO1]
    c2 = cfgv[C_GO2]
    c3 = cfgv[C_GO3]
    val = cfgv[C_GO0] + sig * (c1 + sig * (c2 + sig * c3))
    d1 = c1 + sig * (2.0 * c2 + 3.0 * sig * c3)
    d2 = 2.0 * c2 + 6.0 * sig * c3
    return val, d1, d2


@njit(cache=True)
def cost(z, cfgv, env, parts):
    """Objective value; ``parts`` receives the five terms."""
    n = z.shape[0]
    h = cfgv[C_H]
    for i in range(5):
        parts[i] = 0.0
    for k in range(1, n):
        parts[T_STATE] += h * (cfgv[C_WUY] * z[k, 4] ** 2 + cfgv[C_WR] * z[k, 5] ** 2)
    dprev = cfgv[C_DMEAS]
    for k in range(n):
        dd = z[k, 6] - dprev
        parts[T_CONTROL] += h * cfgv[C_WAX] * z[k, 7] ** 2 + cfgv[C_WDD] * dd * dd / h
        dprev = z[k, 6]
    for k in range(1, n):
        val, _, _ = _tube(cfgv, env[k])
        parts[T_ENV] += cfgv[C_WTUBE] * val
    val, _, _ = _go_poly(cfgv, env[n - 1])
    parts[T_GO] = cfgv[C_WGO] * val
    vs = cfgv[C_VSTAR]
    for k in range(n):
        w = 0.5 if (k == 0 or k == n - 1) else 1.0
        parts[T_SPEED] += h * cfgv[C_WUX] * w * (z[k, 3] - vs) ** 2
    return parts[0] + parts[1] + parts[2] + parts[3] + parts[4]


@njit(cache=True)
def cost_grad(z, cfgv, env, terms, grad):
    """Gradient of the weighted sum ``sum(terms[i] * J_i)``."""
    n = z.shape[0]
    h = cfgv[C_H]
    grad[:, :] = 0.0
    if terms[T_STATE] != 0.0:
        for k in range(1, n):
            grad[k, 4] += terms[T_STATE] * 2.0 * h * cfgv[C_WUY] * z[k, 4]
            grad[k, 5] += terms[T_STATE] * 2.0 * h * cfgv[C_WR] * z[k, 5]
    if terms[T_CONTROL] != 0.0:
        w = terms[T_CONTROL]
        dprev = cfgv[C_DMEAS]
        for k in range(n):
            grad[k, 7] += w * 2.0 * h * cfgv[C_WAX] * z[k, 7]
            dd = z[k, 6] - dprev
            gd = w * 2.0 * cfgv[C_WDD] * dd / h
            grad[k, 6] += gd
            if k > 0:
                grad[k - 1, 6] -= gd
            dprev = z[k, 6]
    if terms[T_ENV] != 0.0:
        wt = -terms[T_ENV] * cfgv[C_WTUBE] * cfgv[C_THETA]
        for k in range(1, n):
            _, pa, pb = _tube(cfgv, env[k])
            grad[k, 0] += wt * (pa * env[k, 1] + pb * env[k, 4])
            grad[k, 1] += wt * (pa * env[k, 2] + pb * env[k, 5])
    if terms[T_GO] != 0.0:
        _, d1, _ = _go_poly(cfgv, env[n - 1])
        gg = terms[T_GO] * cfgv[C_WGO] * d1
        grad[n - 1, 0] += gg * env[n - 1, 7]
        grad[n - 1, 1] += gg * env[n - 1, 8]
    if terms[T_SPEED] != 0.0:
        vs = cfgv[C_VSTAR]
        for k in range(n):
            w = 0.5 if (k == 0 or k == n - 1) else 1.0
            grad[k, 3] += terms[T_SPEED] * 2.0 * h * cfgv[C_WUX] * w * (z[k, 3] - vs)


@njit(cache=True)
def cost_hessian(z, cfgv, env, D, O):
    """Add the (convexified) cost Hessian into diagonal blocks D and
    off-diagonal blocks O (O[k] couples node k-1 rows to node k columns)."""
    n = z.shape[0]
    h = cfgv[C_H]
    wdd = 2.0 * cfgv[C_WDD] / h
    for k in range(n):
        if k > 0:
            D[k, 4, 4] += 2.0 * h * cfgv[C_WUY]
            D[k, 5, 5] += 2.0 * h * cfgv[C_WR]
            D[k - 1, 6, 6] += wdd
            O[k, 6, 6] -= wdd
        D[k, 6, 6] += wdd
        D[k, 7, 7] += 2.0 * h * cfgv[C_WAX]
        w = 0.5 if (k == 0 or k == n - 1) else 1.0
        D[k, 3, 3] += 2.0 * h * cfgv[C_WUX] * w
    th2 = cfgv[C_WTUBE] * cfgv[C_THETA] ** 2
    for k in range(1, n):
        # Hessian of log-sum-exp: sum p_i g_i g_i^T - m m^T
        _, pa, pb = _tube(cfgv, env[k])
        ax = env[k, 1]
        ay = env[k, 2]
        bx = env[k, 4]
        by = env[k, 5]
        mx = pa * ax + pb * bx
        my = pa * ay + pb * by
        D[k, 0, 0] += th2 * (pa * ax * ax + pb * bx * bx - mx * mx)
        hxy = th2 * (pa * ax * ay + pb * bx * by - mx * my)
        D[k, 0, 1] += hxy
        D[k, 1, 0] += hxy
        D[k, 1, 1] += th2 * (pa * ay * ay + pb * by * by - my * my)
    _, _, d2p = _go_poly(cfgv, env[n - 1])
    d2p *= cfgv[C_WGO]
    if d2p > 0.0:
        sx = env[n - 1, 7]
        sy = env[n - 1, 8]
        D[n - 1, 0, 0] += d2p * sx * sx
        D[n - 1, 0, 1] += d2p * sx * sy
        D[n - 1, 1, 0] += d2p * sx * sy
        D[n - 1, 1, 1] += d2p * sy * sy


# --------------------------------------------------------------------------
# constraints

@njit(cache=True)
def _load_v(z, k, v):
    v[0] = z[k, 2]
    v[1] = z[k, 3]
    v[2] = z[k, 4]
    v[3] = z[k, 5]
    v[4] = z[k - 1, 6]
    v[5] = z[k - 1, 7]


@njit(cache=True)
def constraints(z, xi0, p, cfgv, c, g, Jcc, Jcp, Jgc, Jgp, with_jac):
    """Defects ``c`` (N x 6), inequality rows ``g`` (N x 4) and, optionally,
    their Jacobians with respect to the node's own variables (``*c``) and the
    previous node's variables (``*p``)."""
    n = z.shape[0]
    h = cfgv[C_H]
    rate = cfgv[C_RATE] * h
    v = np.empty(6)
    f = np.empty(6)
    jf = np.empty((6, 6))
    fo = np.empty(8)
    jfo = np.empty((8, 6))

    for i in range(NX):
        c[0, i] = z[0, i] - xi0[i]
    dd = z[0, 6] - cfgv[C_DMEAS]
    g[0, 0] = dd - rate
    g[0, 1] = -dd - rate
    g[0, 2] = -1.0
    g[0, 3] = -1.0
    if with_jac:
        Jcc[0, :, :] = 0.0
        Jcp[0, :, :] = 0.0
        Jgc[0, :, :] = 0.0
        Jgp[0, :, :] = 0.0
        for i in range(NX):
            Jcc[0, i, i] = 1.0
        Jgc[0, 0, 6] = 1.0
        Jgc[0, 1, 6] = -1.0

    for k in range(1, n):
        _load_v(z, k, v)
        derivatives(v, p, f, jf, fo, jfo)
        for i in range(NX):
            c[k, i] = z[k, i] - z[k - 1, i] - h * f[i]
        dd = z[k, 6] - z[k - 1, 6]
        g[k, 0] = dd - rate
        g[k, 1] = -dd - rate
        g[k, 2] = fo[6] - 1.0
        g[k, 3] = fo[7] - 1.0
        if with_jac:
            Jcc[k, :, :] = 0.0
            Jcp[k, :, :] = 0.0
            Jgc[k, :, :] = 0.0
            Jgp[k, :, :] = 0.0
            for i in range(NX):
                Jcc[k, i, i] = 1.0
                Jcp[k, i, i] = -1.0
                for j in range(4):
                    Jcc[k, i, 2 + j] -= h * jf[i, j]
                Jcp[k, i, 6] = -h * jf[i, 4]
                Jcp[k, i, 7] = -h * jf[i, 5]
            Jgc[k, 0, 6] = 1.0
            Jgp[k, 0, 6] = -1.0
            Jgc[k, 1, 6] = -1.0
            Jgp[k, 1, 6] = 1.0
            for r in range(2, 4):
                for j in range(4):
                    Jgc[k, r, 2 + j] = jfo[4 + r, j]
                Jgp[k, r, 6] = jfo[4 + r, 4]
                Jgp[k, r, 7] = jfo[4 + r, 5]


@njit(cache=True)
def _lagr_grad_v(v, p, lamk, nuf, nur, h, out, f, jf, fo, jfo):
    derivatives(v, p, f, jf, fo, jfo)
    for j in range(6):
        acc = 0.0
        for i in range(6):
            acc -= h * jf[i, j] * lamk[i]
        out[j] = acc + nuf * jfo[6, j] + nur * jfo[7, j]


@njit(cache=True)
def _make_psd(H):
    """Symmetric 6x6 in place; clip negative eigenvalues when not PD."""
    m = H.shape[0]
    L = np.zeros((m, m))
    ok = True
    for j in range(m):
        d = H[j, j]
        for q in range(j):
            d -= L[j, q] * L[j, q]
        if d <= 1e-12 * (1.0 + abs(H[j, j])):
            ok = False
            break
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, m):
            acc = H[i, j]
            for q in range(j):
                acc -= L[i, q] * L[j, q]
            L[i, j] = acc / L[j, j]
    if ok:
        return
    w, V = np.linalg.eigh(H)
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for q in range(m):
                if w[q] > 0.0:
                    acc += V[i, q] * w[q] * V[j, q]
            H[i, j] = acc


@njit(cache=True)
def constraint_hessian(z, lam, nu, p, cfgv, D, O):
    """Add convexified constraint curvature ``sum lambda_i grad^2 c_i + nu_j grad^2 g_j``.

    Each interval's 6 x 6 block is a forward difference of the analytic
    Lagrangian gradient, symmetrized and projected onto the PSD cone.
    """
    n = z.shape[0]
    h = cfgv[C_H]
    v = np.empty(6)
    vp = np.empty(6)
    g0 = np.empty(6)
    g1 = np.empty(6)
    H = np.empty((6, 6))
    f = np.empty(6)
    jf = np.empty((6, 6))
    fo = np.empty(8)
    jfo = np.empty((8, 6))
    for k in range(1, n):
        _load_v(z, k, v)
        lk = lam[k]
        _lagr_grad_v(v, p, lk, nu[k, 2], nu[k, 3], h, g0, f, jf, fo, jfo)
        for j in range(6):
            for q in range(6):
                vp[q] = v[q]
            eps = 1e-6 * max(1.0, abs(v[j]))
            vp[j] += eps
            _lagr_grad_v(vp, p, lk, nu[k, 2], nu[k, 3], h, g1, f, jf, fo, jfo)
            for i in range(6):
                H[i, j] = (g1[i] - g0[i]) / eps
        for i in range(6):
            for j in range(i + 1, 6):
                a = 0.5 * (H[i, j] + H[j, i])
                H[i, j] = a
                H[j, i] = a
        _make_psd(H)
        # v = (z_k[2:6], z_{k-1}[6:8]) so column 2 + i in either node
        for i in range(6):
            ni = k if i < 4 else k - 1
            ci = 2 + i
            for j in range(6):
                nj = k if j < 4 else k - 1
                cj = 2 + j
                val = H[i, j]
                if val == 0.0:
                    continue
                if ni == nj:
                    D[ni, ci, cj] += val
                elif ni == k - 1:
                    O[k, ci, cj] += val
                # the transposed entry (node k row, node k-1 col) is implied


# --------------------------------------------------------------------------
# banded linear algebra

@njit(cache=True)
def _band_add(A, r, c, val):
    off = c - r + KL
    if off < 0 or off > KL + KU:
        raise ValueError("entry outside KKT band")
    A[r, off] += val


@njit(cache=True)
def band_solve(A, b):
    """Solve in place with partial pivoting.  ``A`` uses row storage
    ``A[i, j - i + KL] = a_ij`` with width ``2 KL + KU + 1``; returns False
    on an exactly singular pivot."""
    n = b.size
    prow = np.empty(KL + KU + 1)
    for j in range(n):
        p = j
        pmax = abs(A[j, KL])
        rend = min(n, j + KL + 1)
        for r in range(j + 1, rend):
            val = abs(A[r, j - r + KL])
            if val > pmax:
                pmax = val
                p = r
        if pmax == 0.0:
            return False
        width = min(n, j + KL + KU + 1) - j
        if p != j:
            Aj = A[j]
            Ap = A[p]
            oj = KL
            op = j - p + KL
            for c in range(width):
                t = Aj[oj + c]
                Aj[oj + c] = Ap[op + c]
                Ap[op + c] = t
            t = b[j]
            b[j] = b[p]
            b[p] = t
        Aj = A[j]
        for c in range(width):
            prow[c] = Aj[KL + c]
        piv = prow[0]
        bj = b[j]
        for r in range(j + 1, rend):
            Ar = A[r]
            o = j - r + KL
            fct = Ar[o]
            if fct != 0.0:
                fct /= piv
                for c in range(1, width):
                    Ar[o + c] -= fct * prow[c]
                b[r] -= fct * bj
    for j in range(n - 1, -1, -1):
        Aj = A[j]
        acc = b[j]
        for c in range(1, min(n - j, KL + KU + 1)):
            acc -= Aj[KL + c] * b[j + c]
        b[j] = acc / Aj[KL]
    return True


@njit(cache=True)
def assemble_kkt(D, O, Jcc, Jcp, Jgc, Jgp, sig_s, sig_z, dw, dc, A):
    n = D.shape[0]
    A[:, :] = 0.0
    for k in range(n):
        lb0 = BLK * k
        zb = lb0 + NX
        pb = zb - BLK
        for i in range(NX):
            r = lb0 + i
            A[r, KL] -= dc
            for j in range(NZ):
                val = Jcc[k, i, j]
                if val != 0.0:
                    _band_add(A, r, zb + j, val)
                    _band_add(A, zb + j, r, val)
                if k > 0:
                    val = Jcp[k, i, j]
                    if val != 0.0:
                        _band_add(A, r, pb + j, val)
                        _band_add(A, pb + j, r, val)
        for i in range(NZ):
            for j in range(NZ):
                val = D[k, i, j]
                if val != 0.0:
                    _band_add(A, zb + i, zb + j, val)
            A[zb + i, KL] += sig_z[k, i] + dw
        if k > 0:
            for i in range(NZ):
                for j in range(NZ):
                    val = O[k, i, j]
                    if val != 0.0:
                        _band_add(A, pb + i, zb + j, val)
                        _band_add(A, zb + j, pb + i, val)
        for r in range(NI):
            sg = sig_s[k, r]
            if sg == 0.0:
                continue
            for i in range(NZ):
                a = Jgc[k, r, i]
                if a == 0.0:
                    continue
                for j in range(NZ):
                    b = Jgc[k, r, j]
                    if b != 0.0:
                        _band_add(A, zb + i, zb + j, sg * a * b)
            if k > 0:
                for i in range(NZ):
                    a = Jgp[k, r, i]
                    if a == 0.0:
                        continue
                    for j in range(NZ):
                        b = Jgp[k, r, j]
                        if b != 0.0:
                            _band_add(A, pb + i, pb + j, sg * a * b)
                        b = Jgc[k, r, j]
                        if b != 0.0:
                            _band_add(A, pb + i, zb + j, sg * a * b)
                            _band_add(A, zb + j, pb + i, sg * a * b)


# --------------------------------------------------------------------------
# interior point

@njit(cache=True)
def _dual_residual(grad, lam, nu, zl, zu, Jcc, Jcp, Jgc, Jgp, rd):
    n = grad.shape[0]
    for k in range(n):
        for j in range(NZ):
            rd[k, j] = grad[k, j] - zl[k, j] + zu[k, j]
    for k in range(n):
        for i in range(NX):
            lk = lam[k, i]
            if lk == 0.0:
                continue
            for j in range(NZ):
                rd[k, j] += Jcc[k, i, j] * lk
                if k > 0:
                    rd[k - 1, j] += Jcp[k, i, j] * lk
        for r in range(NI):
            nk = nu[k, r]
            for j in range(NZ):
                rd[k, j] += Jgc[k, r, j] * nk
                if k > 0:
                    rd[k - 1, j] += Jgp[k, r, j] * nk


@njit(cache=True)
def _jg_dot(Jgc, Jgp, dz, k, r):
    acc = 0.0
    for j in range(NZ):
        acc += Jgc[k, r, j] * dz[k, j]
        if k > 0:
            acc += Jgp[k, r, j] * dz[k - 1, j]
    return acc


@njit(cache=True)
def _barrier_merit(f, s, z, lb, ub, hasl, hasu, c, g, mu, rho):
    n = z.shape[0]
    bar = 0.0
    inf = 0.0
    for k in range(n):
        for r in range(NI):
            if s[k, r] <= 0.0:
                return math.inf, math.inf
            bar -= math.log(s[k, r])
            inf += abs(g[k, r] + s[k, r])
        for i in range(NX):
            inf += abs(c[k, i])
        for j in range(NZ):
            if hasl[k, j]:
                if z[k, j] <= lb[k, j]:
                    return math.inf, math.inf
                bar -= math.log(z[k, j] - lb[k, j])
            if hasu[k, j]:
                if z[k, j] >= ub[k, j]:
                    return math.inf, math.inf
                bar -= math.log(ub[k, j] - z[k, j])
    return f + mu * bar + rho * inf, inf


@njit(cache=True)
def _violation(c, g):
    v = 0.0
    for k in range(c.shape[0]):
        for i in range(NX):
            v = max(v, abs(c[k, i]))
        for r in range(NI):
            v = max(v, g[k, r])
    return v


@njit(cache=True)
def _newton_rhs(rd, c, gs, mu, z, lb, ub, hasl, hasu, zl, zu, s, nu, sig_s, Jgc, Jgp, rhs):
    """Right-hand side of the condensed primal-dual system; ``gs`` is the
    inequality residual ``g + s`` (replaced by a corrected one for SOC)."""
    n = z.shape[0]
    for k in range(n):
        for j in range(NZ):
            val = -rd[k, j]
            if hasl[k, j]:
                val += mu / (z[k, j] - lb[k, j]) - zl[k, j]
            if hasu[k, j]:
                val -= mu / (ub[k, j] - z[k, j]) - zu[k, j]
            rhs[BLK * k + NX + j] = val
        for i in range(NX):
            rhs[BLK * k + i] = -c[k, i]
    for k in range(n):
        for r in range(NI):
            w = mu / s[k, r] - nu[k, r] + sig_s[k, r] * gs[k, r]
            for j in range(NZ):
                a = Jgc[k, r, j]
                if a != 0.0:
                    rhs[BLK * k + NX + j] -= a * w
                if k > 0:
                    a = Jgp[k, r, j]
                    if a != 0.0:
                        rhs[BLK * (k - 1) + NX + j] -= a * w


@njit(cache=True)
def _recover_step(sol, gs, mu, z, lb, ub, hasl, hasu, zl, zu, s, nu, sig_s, Jgc, Jgp,
                  dz, dlam, ds, dnu, dzl, dzu):
    n = z.shape[0]
    for k in range(n):
        for i in range(NX):
            dlam[k, i] = sol[BLK * k + i]
        for j in range(NZ):
            dz[k, j] = sol[BLK * k + NX + j]
    for k in range(n):
        for r in range(NI):
            ds[k, r] = -gs[k, r] - _jg_dot(Jgc, Jgp, dz, k, r)
            dnu[k, r] = mu / s[k, r] - nu[k, r] - sig_s[k, r] * ds[k, r]
        for j in range(NZ):
            if hasl[k, j]:
                q = z[k, j] - lb[k, j]
                dzl[k, j] = mu / q - zl[k, j] - zl[k, j] / q * dz[k, j]
            else:
                dzl[k, j] = 0.0
            if hasu[k, j]:
                q = ub[k, j] - z[k, j]
                dzu[k, j] = mu / q - zu[k, j] + zu[k, j] / q * dz[k, j]
            else:
                dzu[k, j] = 0.0


@njit(cache=True)
def _max_steps(tau, z, lb, ub, hasl, hasu, zl, zu, s, nu, dz, ds, dnu, dzl, dzu):
    """Fraction-to-the-boundary step lengths ``(primal, dual)``."""
    n = z.shape[0]
    ap = 1.0
    ad = 1.0
    for k in range(n):
        for r in range(NI):
            if ds[k, r] < 0.0:
                ap = min(ap, -tau * s[k, r] / ds[k, r])
            if dnu[k, r] < 0.0:
                ad = min(ad, -tau * nu[k, r] / dnu[k, r])
        for j in range(NZ):
            if hasl[k, j]:
                if dz[k, j] < 0.0:
                    ap = min(ap, -tau * (z[k, j] - lb[k, j]) / dz[k, j])
                if dzl[k, j] < 0.0:
                    ad = min(ad, -tau * zl[k, j] / dzl[k, j])
            if hasu[k, j]:
                if dz[k, j] > 0.0:
                    ap = min(ap, tau * (ub[k, j] - z[k, j]) / dz[k, j])
                if dzu[k, j] < 0.0:
                    ad = min(ad, -tau * zu[k, j] / dzu[k, j])
    return ap, ad


BEST_PENALTY = 1e4


@njit(cache=True)
def ipm_solve(z, lam, s, nu, zl, zu, xi0, p, cfgv, lb, ub, hasl, hasu,
              hints, closed, ts, xs, ys, tx, ty, seg_len, wl, wr,
              maxit, tol, mu_init, warm, info, trace):
    """Primal-dual interior-point method with an l1 merit line search.

    All primal/dual arrays are updated in place and end holding the returned
    iterate: the converged point, or the best one seen when the iteration cap
    is hit.  ``info`` receives ``(status, iterations, kkt_error, violation,
    objective, mu)``.
    """
    n = z.shape[0]
    ntot = n * BLK
    terms = np.ones(5)
    parts = np.empty(5)
    env = np.empty((n, 9))
    grad = np.empty((n, NZ))
    c = np.empty((n, NX))
    g = np.empty((n, NI))
    Jcc = np.empty((n, NX, NZ))
    Jcp = np.empty((n, NX, NZ))
    Jgc = np.empty((n, NI, NZ))
    Jgp = np.empty((n, NI, NZ))
    D = np.empty((n, NZ, NZ))
    O = np.empty((n, NZ, NZ))
    A = np.empty((ntot, BAND_W))
    rhs = np.empty(ntot)
    rd = np.empty((n, NZ))
    sig_s = np.empty((n, NI))
    sig_z = np.empty((n, NZ))
    dz = np.empty((n, NZ))
    dlam = np.empty((n, NX))
    ds = np.empty((n, NI))
    dnu = np.empty((n, NI))
    dzl = np.empty((n, NZ))
    dzu = np.empty((n, NZ))
    zt = np.empty((n, NZ))
    st = np.empty((n, NI))
    ct = np.empty((n, NX))
    gt = np.empty((n, NI))
    env_t = np.empty((n, 9))
    hints_t = hints.copy()
    A_keep = np.empty((ntot, BAND_W))
    gsr = np.empty((n, NI))
    gs2 = np.empty((n, NI))
    cs = np.empty((n, NX))
    dz2 = np.empty((n, NZ))
    dlam2 = np.empty((n, NX))
    ds2 = np.empty((n, NI))
    dnu2 = np.empty((n, NI))
    dzl2 = np.empty((n, NZ))
    dzu2 = np.empty((n, NZ))
    n_soc = 0
    best_z = z.copy()
    best_lam = lam.copy()
    best_s = s.copy()
    best_nu = nu.copy()
    best_zl = zl.copy()
    best_zu = zu.copy()
    best_hints = hints.copy()

    # strictly interior start with respect to the variable bounds
    for k in range(n):
        for j in range(NZ):
            lo = lb[k, j]
            hi = ub[k, j]
            if hasl[k, j] and hasu[k, j]:
                push = min(1e-2 * max(1.0, abs(lo)), 1e-2 * max(1.0, abs(hi)), 0.25 * (hi - lo))
                z[k, j] = min(max(z[k, j], lo + push), hi - push)
            elif hasl[k, j]:
                z[k, j] = max(z[k, j], lo + 1e-2 * max(1.0, abs(lo)))
            elif hasu[k, j]:
                z[k, j] = min(z[k, j], hi - 1e-2 * max(1.0, abs(hi)))

    project_nodes(z, cfgv, hints, closed, ts, xs, ys, tx, ty, seg_len, wl, wr, env)
    f = cost(z, cfgv, env, parts)
    constraints(z, xi0, p, cfgv, c, g, Jcc, Jcp, Jgc, Jgp, True)
    smin = 1e-4 if warm else 1e-2
    for k in range(n):
        for r in range(NI):
            s[k, r] = max(-g[k, r], smin)
            if warm:
                nu[k, r] = max(nu[k, r], 1e-8)
            else:
                nu[k, r] = mu_init / s[k, r]
        for j in range(NZ):
            if hasl[k, j]:
                zl[k, j] = max(zl[k, j], 1e-8) if warm else mu_init / (z[k, j] - lb[k, j])
            else:
                zl[k, j] = 0.0
            if hasu[k, j]:
                zu[k, j] = max(zu[k, j], 1e-8) if warm else mu_init / (ub[k, j] - z[k, j])
            else:
                zu[k, j] = 0.0
        if not warm:
            for i in range(NX):
                lam[k, i] = 0.0

    rho = 1.0
    mu = mu_init
    best_score = 1e300
    best_viol = 1e300
    status = MAX_ITER
    it = 0
    kkt = 1e300
    n_comp = 0
    for k in range(n):
        n_comp += NI
        for j in range(NZ):
            if hasl[k, j]:
                n_comp += 1
            if hasu[k, j]:
                n_comp += 1

    while True:
        cost_grad(z, cfgv, env, terms, grad)
        _dual_residual(grad, lam, nu, zl, zu, Jcc, Jcp, Jgc, Jgp, rd)

        # optimality measures
        dual_sum = 0.0
        comp_sum = 0.0
        comp_min = 1e300
        comp_max = 0.0
        for k in range(n):
            for i in range(NX):
                dual_sum += abs(lam[k, i])
            for r in range(NI):
                dual_sum += nu[k, r]
                cp_ = s[k, r] * nu[k, r]
                comp_sum += cp_
                comp_min = min(comp_min, cp_)
                comp_max = max(comp_max, cp_)
            for j in range(NZ):
                if hasl[k, j]:
                    cp_ = (z[k, j] - lb[k, j]) * zl[k, j]
                    dual_sum += zl[k, j]
                    comp_sum += cp_
                    comp_min = min(comp_min, cp_)
                    comp_max = max(comp_max, cp_)
                if hasu[k, j]:
                    cp_ = (ub[k, j] - z[k, j]) * zu[k, j]
                    dual_sum += zu[k, j]
                    comp_sum += cp_
                    comp_min = min(comp_min, cp_)
                    comp_max = max(comp_max, cp_)
        sd = max(100.0, dual_sum / (n * (NX + NI + NZ))) / 100.0
        rd_max = 0.0
        for k in range(n):
            for j in range(NZ):
                rd_max = max(rd_max, abs(rd[k, j]))
        prim = 0.0
        for k in range(n):
            for i in range(NX):
                prim = max(prim, abs(c[k, i]))
            for r in range(NI):
                prim = max(prim, abs(g[k, r] + s[k, r]))
        kkt = max(rd_max / sd, prim, comp_max / sd)
        if it < trace.shape[0]:
            trace[it, 0] = kkt
            trace[it, 1] = rd_max / sd
            trace[it, 2] = prim
            trace[it, 3] = comp_max / sd
            trace[it, 4] = mu
            trace[it, 7] = f

        viol = _violation(c, g)
        # exact-penalty merit; a feasible iterate is ranked by cost alone
        score = f if viol <= 1e-4 else f + BEST_PENALTY * viol
        if score < best_score:
            best_score = score
            best_viol = viol
            best_z[:, :] = z
            best_lam[:, :] = lam
            best_s[:, :] = s
            best_nu[:, :] = nu
            best_zl[:, :] = zl
            best_zu[:, :] = zu
            best_hints[:] = hints

        if kkt < tol:
            status = OPTIMAL
            break
        if it >= maxit:
            break
        it += 1

        # barrier parameter (LOQO rule)
        avg = comp_sum / n_comp
        xi = comp_min / avg if avg > 0.0 else 1.0
        sigma = 0.1 * min(0.05 * (1.0 - xi) / max(xi, 1e-12), 2.0) ** 3
        mu = max(sigma * avg, tol / 10.0)

        # Hessian of the Lagrangian, convexified per block
        D[:, :, :] = 0.0
        O[:, :, :] = 0.0
        cost_hessian(z, cfgv, env, D, O)
        constraint_hessian(z, lam, nu, p, cfgv, D, O)

        for k in range(n):
            for r in range(NI):
                sig_s[k, r] = nu[k, r] / s[k, r]
            for j in range(NZ):
                sz = 0.0
                if hasl[k, j]:
                    sz += zl[k, j] / (z[k, j] - lb[k, j])
                if hasu[k, j]:
                    sz += zu[k, j] / (ub[k, j] - z[k, j])
                sig_z[k, j] = sz

        for k in range(n):
            for r in range(NI):
                gsr[k, r] = g[k, r] + s[k, r]
        _newton_rhs(rd, c, gsr, mu, z, lb, ub, hasl, hasu, zl, zu, s, nu, sig_s, Jgc, Jgp, rhs)

        dw = 1e-8
        solved = False
        for attempt in range(6):
            assemble_kkt(D, O, Jcc, Jcp, Jgc, Jgp, sig_s, sig_z, dw, 1e-10, A)
            A_keep[:, :] = A
            sol = rhs.copy()
            if band_solve(A, sol):
                ok = True
                for q in range(ntot):
                    if not math.isfinite(sol[q]):
                        ok = False
                        break
                if ok:
                    solved = True
                    break
            dw = max(dw * 100.0, 1e-4)
        if not solved:
            break
        _recover_step(sol, gsr, mu, z, lb, ub, hasl, hasu, zl, zu, s, nu, sig_s, Jgc, Jgp,
                      dz, dlam, ds, dnu, dzl, dzu)

        tau = max(0.99, 1.0 - mu)
        ap, ad = _max_steps(tau, z, lb, ub, hasl, hasu, zl, zu, s, nu, dz, ds, dnu, dzl, dzu)

        # penalty parameter and directional derivative
        mult = 0.0
        for k in range(n):
            for i in range(NX):
                mult = max(mult, abs(lam[k, i] + dlam[k, i]))
            for r in range(NI):
                mult = max(mult, abs(nu[k, r] + dnu[k, r]))
        if rho < 1.1 * mult:
            rho = 1.1 * mult + 1.0
        phi0, inf0 = _barrier_merit(f, s, z, lb, ub, hasl, hasu, c, g, mu, rho)
        dphi = -rho * inf0
        for k in range(n):
            for j in range(NZ):
                dphi += grad[k, j] * dz[k, j]
                if hasl[k, j]:
                    dphi -= mu * dz[k, j] / (z[k, j] - lb[k, j])
                if hasu[k, j]:
                    dphi += mu * dz[k, j] / (ub[k, j] - z[k, j])
            for r in range(NI):
                dphi -= mu * ds[k, r] / s[k, r]

        alpha = ap
        accepted = False
        ft = f
        for ls in range(25):
            for k in range(n):
                for j in range(NZ):
                    zt[k, j] = z[k, j] + alpha * dz[k, j]
                for r in range(NI):
                    st[k, r] = s[k, r] + alpha * ds[k, r]
            hints_t[:] = hints
            project_nodes(zt, cfgv, hints_t, closed, ts, xs, ys, tx, ty, seg_len, wl, wr, env_t)
            ft = cost(zt, cfgv, env_t, parts)
            constraints(zt, xi0, p, cfgv, ct, gt, Jcc, Jcp, Jgc, Jgp, False)
            phit, inft = _barrier_merit(ft, st, zt, lb, ub, hasl, hasu, ct, gt, mu, rho)
            if math.isfinite(phit) and phit <= phi0 + 1e-4 * alpha * min(dphi, 0.0):
                accepted = True
                break
            if ls == 0 and alpha == 1.0 and inft >= inf0:
                # second-order correction against the Maratos effect
                for k in range(n):
                    for i in range(NX):
                        cs[k, i] = c[k, i] + ct[k, i]
                    for r in range(NI):
                        gs2[k, r] = gsr[k, r] + gt[k, r] + st[k, r]
                _newton_rhs(rd, cs, gs2, mu, z, lb, ub, hasl, hasu, zl, zu, s, nu, sig_s,
                            Jgc, Jgp, rhs)
                A[:, :] = A_keep
                sol2 = rhs.copy()
                if band_solve(A, sol2):
                    _recover_step(sol2, gs2, mu, z, lb, ub, hasl, hasu, zl, zu, s, nu, sig_s,
                                  Jgc, Jgp, dz2, dlam2, ds2, dnu2, dzl2, dzu2)
                    ap2, ad2 = _max_steps(tau, z, lb, ub, hasl, hasu, zl, zu, s, nu,
                                          dz2, ds2, dnu2, dzl2, dzu2)
                    if ap2 == 1.0:
                        for k in range(n):
                            for j in range(NZ):
                                zt[k, j] = z[k, j] + dz2[k, j]
                            for r in range(NI):
                                st[k, r] = s[k, r] + ds2[k, r]
                        hints_t[:] = hints
                        project_nodes(zt, cfgv, hints_t, closed, ts, xs, ys, tx, ty, seg_len,
                                      wl, wr, env_t)
                        ft = cost(zt, cfgv, env_t, parts)
                        constraints(zt, xi0, p, cfgv, ct, gt, Jcc, Jcp, Jgc, Jgp, False)
                        phit, _ = _barrier_merit(ft, st, zt, lb, ub, hasl, hasu, ct, gt, mu, rho)
                        if math.isfinite(phit) and phit <= phi0 + 1e-4 * min(dphi, 0.0):
                            dz[:, :] = dz2
                            dlam[:, :] = dlam2
                            ds[:, :] = ds2
                            dnu[:, :] = dnu2
                            dzl[:, :] = dzl2
                            dzu[:, :] = dzu2
                            ad = ad2
                            accepted = True
                            n_soc += 1
                            break
            alpha *= 0.5
        if not accepted:
            # take a tiny step anyway so the iteration keeps moving
            alpha = min(ap, 1e-3)
            for k in range(n):
                for j in range(NZ):
                    zt[k, j] = z[k, j] + alpha * dz[k, j]
                for r in range(NI):
                    st[k, r] = s[k, r] + alpha * ds[k, r]
            hints_t[:] = hints

        for k in range(n):
            for j in range(NZ):
                # rounding can land a component on its bound; keep it inside
                if hasl[k, j] and zt[k, j] - lb[k, j] <= 1e-14 * max(1.0, abs(lb[k, j])):
                    zt[k, j] = z[k, j]
                if hasu[k, j] and ub[k, j] - zt[k, j] <= 1e-14 * max(1.0, abs(ub[k, j])):
                    zt[k, j] = z[k, j]
                z[k, j] = zt[k, j]
                if hasl[k, j]:
                    zl[k, j] += ad * dzl[k, j]
                    q = z[k, j] - lb[k, j]
                    zl[k, j] = min(max(zl[k, j], mu / (1e10 * q)), 1e10 * mu / q)
                if hasu[k, j]:
                    zu[k, j] += ad * dzu[k, j]
                    q = ub[k, j] - z[k, j]
                    zu[k, j] = min(max(zu[k, j], mu / (1e10 * q)), 1e10 * mu / q)
            for i in range(NX):
                lam[k, i] += alpha * dlam[k, i]
            for r in range(NI):
                if st[k, r] > 1e-14:
                    s[k, r] = st[k, r]
                nu[k, r] += ad * dnu[k, r]
                nu[k, r] = min(max(nu[k, r], mu / (1e10 * s[k, r])), 1e10 * mu / s[k, r])
        if it - 1 < trace.shape[0]:
            trace[it - 1, 5] = alpha
            trace[it - 1, 6] = ad
            trace[it - 1, 8] = rho
            trace[it - 1, 9] = ap
        hints[:] = hints_t
        project_nodes(z, cfgv, hints, closed, ts, xs, ys, tx, ty, seg_len, wl, wr, env)
        f = cost(z, cfgv, env, parts)
        constraints(z, xi0, p, cfgv, c, g, Jcc, Jcp, Jgc, Jgp, True)

    if status != OPTIMAL:
        z[:, :] = best_z
        lam[:, :] = best_lam
        s[:, :] = best_s
        nu[:, :] = best_nu
        zl[:, :] = best_zl
        zu[:, :] = best_zu
        hints[:] = best_hints
        project_nodes(z, cfgv, hints, closed, ts, xs, ys, tx, ty, seg_len, wl, wr, env)
        f = cost(z, cfgv, env, parts)
        constraints(z, xi0, p, cfgv, c, g, Jcc, Jcp, Jgc, Jgp, False)
    info[0] = status
    info[1] = it
    info[2] = kkt
    info[3] = _violation(c, g)
    info[4] = f
    info[5] = mu


@njit(cache=True)
def implicit_rollout(xi0, controls, p, h, out):
    """Backward-Euler trajectory from ``xi0`` under node controls: node ``k``
    solves ``xi_k = xi_{k-1} + h f(xi_k, u_{k-1})`` by Newton iteration."""
    n = controls.shape[0]
    v = np.empty(6)
    f = np.empty(6)
    jf = np.empty((6, 6))
    fo = np.empty(8)
    jfo = np.empty((8, 6))
    M = np.empty((6, 6))
    res = np.empty(6)
    for i in range(6):
        out[0, i] = xi0[i]
    for k in range(1, n):
        for i in range(6):
            out[k, i] = out[k - 1, i]
        for _ in range(30):
            v[0] = out[k, 2]
            v[1] = out[k, 3]
            v[2] = out[k, 4]
            v[3] = out[k, 5]
            v[4] = controls[k - 1, 0]
            v[5] = controls[k - 1, 1]
            derivatives(v, p, f, jf, fo, jfo)
            nrm = 0.0
            for i in range(6):
                res[i] = out[k, i] - out[k - 1, i] - h * f[i]
                nrm = max(nrm, abs(res[i]))
            if nrm < 1e-13:
                break
            for i in range(6):
                for j in range(6):
                    M[i, j] = (1.0 if i == j else 0.0)
                for j in range(4):
                    M[i, 2 + j] -= h * jf[i, j]
            step = np.linalg.solve(M, res)
            for i in range(6):
                out[k, i] -= step[i]
