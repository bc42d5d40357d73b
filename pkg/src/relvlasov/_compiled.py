"""Compiled inner loops.

Parallel loops run over targets only and each target's sum runs over
sources in index order, so results do not depend on the thread count.
"""
import math

import numba
import numpy as np

from .kernels import WENDLAND_FORCE_COEF, WENDLAND_POT_COEF

FOUR_PI = 4.0 * math.pi
_WF = np.ascontiguousarray(WENDLAND_FORCE_COEF)
_WP = np.ascontiguousarray(WENDLAND_POT_COEF)


@numba.njit(cache=True, inline="always")
def _horner(coef, s):
    acc = 0.0
    for k in range(coef.shape[0] - 1, -1, -1):
        acc = acc * s + coef[k]
    return acc


@numba.njit(cache=True, inline="always")
def _force_factor(r2, radius, shape, wf):
    # returns g with K_R(d) = g * d; shape 0 is the singular kernel
    r = math.sqrt(r2)
    if shape == 0 or r >= radius:
        return 1.0 / (FOUR_PI * r**3)
    if shape == 1:
        return 1.0 / (FOUR_PI * radius**3)
    return _horner(wf, r / radius) / radius**3


@numba.njit(cache=True, inline="always")
def _potential(r2, radius, shape, wp):
    r = math.sqrt(r2)
    if shape == 0 or r >= radius:
        return 1.0 / (FOUR_PI * r)
    s = r / radius
    if shape == 1:
        return (3.0 - s * s) / (2.0 * FOUR_PI * radius)
    return _horner(wp, s) / radius


@numba.njit(cache=True, parallel=True)
def pair_fields(targets, src_x, src_vhat, src_w, radius, shape, sigma_e, sigma_b):
    """E and B at each target from weighted point sources.

    Returns (E, B, n_singular); n_singular counts target/source
    coincidences met with the singular kernel (those pairs are skipped).
    """
    nt = targets.shape[0]
    ns = src_x.shape[0]
    E = np.zeros((nt, 3))
    B = np.zeros((nt, 3))
    bad = np.zeros(nt, dtype=np.int64)
    wf = _WF
    for i in numba.prange(nt):
        ex = 0.0
        ey = 0.0
        ez = 0.0
        bx = 0.0
        by = 0.0
        bz = 0.0
        tx = targets[i, 0]
        ty = targets[i, 1]
        tz = targets[i, 2]
        for j in range(ns):
            dx = tx - src_x[j, 0]
            dy = ty - src_x[j, 1]
            dz = tz - src_x[j, 2]
            r2 = dx * dx + dy * dy + dz * dz
            if r2 == 0.0:
                if shape == 0:
                    bad[i] += 1
                continue
            g = src_w[j] * _force_factor(r2, radius, shape, wf)
            kx = g * dx
            ky = g * dy
            kz = g * dz
            ex += kx
            ey += ky
            ez += kz
            ux = src_vhat[j, 0]
            uy = src_vhat[j, 1]
            uz = src_vhat[j, 2]
            bx += uy * kz - uz * ky
            by += uz * kx - ux * kz
            bz += ux * ky - uy * kx
        E[i, 0] = sigma_e * ex
        E[i, 1] = sigma_e * ey
        E[i, 2] = sigma_e * ez
        B[i, 0] = sigma_b * bx
        B[i, 1] = sigma_b * by
        B[i, 2] = sigma_b * bz
    return E, B, bad.sum()


@numba.njit(cache=True)
def pair_energies(x, vhat, w, radius, shape):
    """(1/2) sum_ij w_i w_j H_R(x_i - x_j) and the same with v_i . v_j inserted."""
    n = x.shape[0]
    wp = _WP
    self_h = _potential(0.0, radius, shape, wp) if shape != 0 else 0.0
    pe = 0.0
    pm = 0.0
    for i in range(n):
        pi_e = 0.0
        pi_m = 0.0
        for j in range(n):
            if i == j:
                h = self_h
            else:
                dx = x[i, 0] - x[j, 0]
                dy = x[i, 1] - x[j, 1]
                dz = x[i, 2] - x[j, 2]
                r2 = dx * dx + dy * dy + dz * dz
                if r2 == 0.0 and shape == 0:
                    continue
                h = _potential(r2, radius, shape, wp)
            wh = w[j] * h
            pi_e += wh
            pi_m += wh * (vhat[i, 0] * vhat[j, 0] + vhat[i, 1] * vhat[j, 1] + vhat[i, 2] * vhat[j, 2])
        pe += w[i] * pi_e
        pm += w[i] * pi_m
    return 0.5 * pe, 0.5 * pm


@numba.njit(cache=True, parallel=True)
def trilinear(values, origin, h, points):
    """Trilinear interpolation of node data ``values`` (nx, ny, nz, c).

    Returns (out, inside); points outside the node box get zeros and
    inside=False.
    """
    npts = points.shape[0]
    nx, ny, nz, nc = values.shape
    out = np.zeros((npts, nc))
    inside = np.zeros(npts, dtype=np.bool_)
    for p in numba.prange(npts):
        fx = (points[p, 0] - origin[0]) / h
        fy = (points[p, 1] - origin[1]) / h
        fz = (points[p, 2] - origin[2]) / h
        if not (fx >= 0.0 and fy >= 0.0 and fz >= 0.0 and fx <= nx - 1 and fy <= ny - 1 and fz <= nz - 1):
            continue
        i = min(int(fx), nx - 2)
        j = min(int(fy), ny - 2)
        k = min(int(fz), nz - 2)
        ax = fx - i
        ay = fy - j
        az = fz - k
        inside[p] = True
        for c in range(nc):
            c00 = values[i, j, k, c] * (1 - ax) + values[i + 1, j, k, c] * ax
            c10 = values[i, j + 1, k, c] * (1 - ax) + values[i + 1, j + 1, k, c] * ax
            c01 = values[i, j, k + 1, c] * (1 - ax) + values[i + 1, j, k + 1, c] * ax
            c11 = values[i, j + 1, k + 1, c] * (1 - ax) + values[i + 1, j + 1, k + 1, c] * ax
            c0 = c00 * (1 - ay) + c10 * ay
            c1 = c01 * (1 - ay) + c11 * ay
            out[p, c] = c0 * (1 - az) + c1 * az
    return out, inside


@numba.njit(cache=True, parallel=True)
def grid_potential_direct(mu, h, radius, shape):
    """Brute-force double sum over nodes of mu_c' h^3 H_R(x_c - x_c')."""
    nx, ny, nz, nc = mu.shape
    wp = _WP
    out = np.zeros((nx, ny, nz, nc))
    vol = h**3
    for a in numba.prange(nx):
        for b in range(ny):
            for c in range(nz):
                for i in range(nx):
                    for j in range(ny):
                        for k in range(nz):
                            dx = (a - i) * h
                            dy = (b - j) * h
                            dz = (c - k) * h
                            g = vol * _potential(dx * dx + dy * dy + dz * dz, radius, shape, wp)
                            for m in range(nc):
                                out[a, b, c, m] += g * mu[i, j, k, m]
    return out


@numba.njit(cache=True, inline="always")
def _locate(times, t):
    # mirrors FieldHistory.locate: (k, a) with t = (1 - a) t_k + a t_{k+1}
    m = times.shape[0]
    if m == 1:
        return 0, 0.0
    k = np.searchsorted(times, t, side="right") - 1
    k = min(max(k, 0), m - 2)
    a = (t - times[k]) / (times[k + 1] - times[k])
    if abs(a) < 1e-9:
        a = 0.0
    elif abs(a - 1.0) < 1e-9:
        a = 1.0
    return k, min(max(a, 0.0), 1.0)


@numba.njit(cache=True)
def _node_eval(values, k, origin, h, x, y, z, out):
    nx, ny, nz = values.shape[1], values.shape[2], values.shape[3]
    fx = (x - origin[0]) / h
    fy = (y - origin[1]) / h
    fz = (z - origin[2]) / h
    if not (fx >= 0.0 and fy >= 0.0 and fz >= 0.0 and fx <= nx - 1 and fy <= ny - 1 and fz <= nz - 1):
        return False
    i = min(int(fx), nx - 2)
    j = min(int(fy), ny - 2)
    l = min(int(fz), nz - 2)
    ax = fx - i
    ay = fy - j
    az = fz - l
    for c in range(6):
        c00 = values[k, i, j, l, c] * (1 - ax) + values[k, i + 1, j, l, c] * ax
        c10 = values[k, i, j + 1, l, c] * (1 - ax) + values[k, i + 1, j + 1, l, c] * ax
        c01 = values[k, i, j, l + 1, c] * (1 - ax) + values[k, i + 1, j, l + 1, c] * ax
        c11 = values[k, i, j + 1, l + 1, c] * (1 - ax) + values[k, i + 1, j + 1, l + 1, c] * ax
        c0 = c00 * (1 - ay) + c10 * ay
        c1 = c01 * (1 - ay) + c11 * ay
        out[c] = c0 * (1 - az) + c1 * az
    return True


@numba.njit(cache=True, inline="always")
def _bspline_weights(u, w):
    v = 1.0 - u
    w[0] = v * v * v / 6.0
    w[1] = (3.0 * u * u * u - 6.0 * u * u + 4.0) / 6.0
    w[2] = (-3.0 * u * u * u + 3.0 * u * u + 3.0 * u + 1.0) / 6.0
    w[3] = u * u * u / 6.0


@numba.njit(cache=True)
def _node_eval_cubic(coef, k, origin, h, x, y, z, out):
    # cubic B-spline evaluation from prefiltered coefficients; needs one
    # extra node on each side, so the usable box is [1, n - 2] in index units
    nx, ny, nz = coef.shape[1], coef.shape[2], coef.shape[3]
    fx = (x - origin[0]) / h
    fy = (y - origin[1]) / h
    fz = (z - origin[2]) / h
    if not (fx >= 1.0 and fy >= 1.0 and fz >= 1.0 and fx <= nx - 2 and fy <= ny - 2 and fz <= nz - 2):
        return False
    i = min(int(fx), nx - 3)
    j = min(int(fy), ny - 3)
    l = min(int(fz), nz - 3)
    wx = np.empty(4)
    wy = np.empty(4)
    wz = np.empty(4)
    _bspline_weights(fx - i, wx)
    _bspline_weights(fy - j, wy)
    _bspline_weights(fz - l, wz)
    for c in range(6):
        out[c] = 0.0
    for a in range(4):
        for b in range(4):
            wab = wx[a] * wy[b]
            for d in range(4):
                wt = wab * wz[d]
                for c in range(6):
                    out[c] += wt * coef[k, i - 1 + a, j - 1 + b, l - 1 + d, c]
    return True


@numba.njit(cache=True)
def _node_eval_order(values, order, k, origin, h, x, y, z, out):
    if order == 3:
        return _node_eval_cubic(values, k, origin, h, x, y, z, out)
    return _node_eval(values, k, origin, h, x, y, z, out)


@numba.njit(cache=True, parallel=True)
def node_interp(values, order, origin, h, points):
    """Interpolate (K=1, nx, ny, nz, 6) node data at points; returns (out, inside)."""
    npts = points.shape[0]
    out = np.zeros((npts, 6))
    inside = np.zeros(npts, dtype=np.bool_)
    for p in numba.prange(npts):
        buf = np.empty(6)
        if _node_eval_order(values, order, 0, origin, h, points[p, 0], points[p, 1], points[p, 2], buf):
            inside[p] = True
            for c in range(6):
                out[p, c] = buf[c]
    return out, inside


@numba.njit(cache=True)
def _phase_rhs(values, order, times, origin, h, y, t, dy, f0, f1):
    k, a = _locate(times, t)
    if a == 1.0:
        k += 1
    if not _node_eval_order(values, order, k, origin, h, y[0], y[1], y[2], f0):
        return False
    if a != 0.0 and a != 1.0:
        if not _node_eval_order(values, order, k + 1, origin, h, y[0], y[1], y[2], f1):
            return False
        for c in range(6):
            f0[c] = (1 - a) * f0[c] + a * f1[c]
    g = math.sqrt(1.0 + y[3] * y[3] + y[4] * y[4] + y[5] * y[5])
    ux = y[3] / g
    uy = y[4] / g
    uz = y[5] / g
    dy[0] = ux
    dy[1] = uy
    dy[2] = uz
    dy[3] = f0[0] + (uy * f0[5] - uz * f0[4])
    dy[4] = f0[1] + (uz * f0[3] - ux * f0[5])
    dy[5] = f0[2] + (ux * f0[4] - uy * f0[3])
    return True


@numba.njit(cache=True, parallel=True)
def rk4_grid_transport(z, t0, t1, n, times, values, order, origin, h):
    """RK4 transport of phase points through node-sampled fields.

    ``values`` is (K, nx, ny, nz, 6) with (E, B) at the history times, as
    node values (``order`` 1, trilinear) or cubic B-spline coefficients
    (``order`` 3).
    Returns (z(t1), ok, vmax); ok is False for points that left the node
    box at some stage (their output row is meaningless).
    """
    npts = z.shape[0]
    out = np.empty_like(z)
    ok = np.ones(npts, dtype=np.bool_)
    vmax = np.zeros(npts)
    dt = (t1 - t0) / n
    for p in numba.prange(npts):
        y = z[p].copy()
        k1 = np.empty(6)
        k2 = np.empty(6)
        k3 = np.empty(6)
        k4 = np.empty(6)
        tmp = np.empty(6)
        f0 = np.empty(6)
        f1 = np.empty(6)
        good = True
        vm = 0.0
        for s in range(n):
            t = t0 + (t1 - t0) * s / n
            if not _phase_rhs(values, order, times, origin, h, y, t, k1, f0, f1):
                good = False
                break
            for c in range(6):
                tmp[c] = y[c] + 0.5 * dt * k1[c]
            if not _phase_rhs(values, order, times, origin, h, tmp, t + 0.5 * dt, k2, f0, f1):
                good = False
                break
            for c in range(6):
                tmp[c] = y[c] + 0.5 * dt * k2[c]
            if not _phase_rhs(values, order, times, origin, h, tmp, t + 0.5 * dt, k3, f0, f1):
                good = False
                break
            for c in range(6):
                tmp[c] = y[c] + dt * k3[c]
            if not _phase_rhs(values, order, times, origin, h, tmp, t + dt, k4, f0, f1):
                good = False
                break
            for c in range(6):
                y[c] = y[c] + dt / 6.0 * (k1[c] + 2 * k2[c] + 2 * k3[c] + k4[c])
            sp = math.sqrt(y[3] * y[3] + y[4] * y[4] + y[5] * y[5])
            if not sp <= vm:
                vm = sp
        ok[p] = good
        vmax[p] = vm
        for c in range(6):
            out[p, c] = y[c]
    return out, ok, vmax
