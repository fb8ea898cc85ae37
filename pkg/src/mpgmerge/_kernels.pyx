# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step simulation kernels; see ``_kernels_py`` for the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, cos, sin, hypot, INFINITY

cnp.import_array()


cdef inline double _sign(double a) nogil:
    if a > 0:
        return 1.0
    if a < 0:
        return -1.0
    return 0.0


def neighbors(double[:, ::1] x, long[:, ::1] lane, bint ramp_sees_target):
    cdef Py_ssize_t B = x.shape[0], N = x.shape[1]
    leader_a = np.full((B, N), -1, dtype=np.int64)
    follower_a = np.full((B, N), -1, dtype=np.int64)
    cdef long[:, ::1] leader = leader_a
    cdef long[:, ::1] follower = follower_a
    cdef Py_ssize_t b, i, j
    cdef long li, fi
    cdef double xi, xj
    cdef bint vis, ahead
    with nogil:
        for b in range(B):
            for i in range(N):
                xi = x[b, i]
                li = -1
                fi = -1
                for j in range(N):
                    if j == i:
                        continue
                    vis = lane[b, j] == lane[b, i] or (ramp_sees_target and lane[b, i] == 0 and lane[b, j] == 1)
                    if not vis:
                        continue
                    xj = x[b, j]
                    ahead = xj > xi or (xj == xi and j > i)
                    if ahead:
                        if li < 0 or xj < x[b, li] or (xj == x[b, li] and j < li):
                            li = j
                    else:
                        if fi < 0 or xj > x[b, fi] or (xj == x[b, fi] and j > fi):
                            fi = j
                leader[b, i] = li
                follower[b, i] = fi
    return leader_a, follower_a


def pair_terms(double[:, ::1] x, double[:, ::1] v, long[:, ::1] lane,
               double v_c, double eps, double x_c, double w21, double w22):
    cdef Py_ssize_t B = x.shape[0], N = x.shape[1]
    P_a = np.zeros((B, N, N))
    Px_a = np.zeros((B, N, N))
    Pv_a = np.zeros((B, N, N))
    T_a = np.empty(N)
    dTx_a = np.empty(N)
    dTv_a = np.empty(N)
    cdef double[:, :, ::1] P = P_a
    cdef double[:, :, ::1] Px = Px_a
    cdef double[:, :, ::1] Pv = Pv_a
    cdef double[::1] T = T_a
    cdef double[::1] dTx = dTx_a
    cdef double[::1] dTv = dTv_a
    cdef Py_ssize_t b, i, j
    cdef double dx, dv, ax, av, ttc, den, g, dtx, dtv, val, ti, tj, root, diff, D, droot, gi, gj
    with nogil:
        for b in range(B):
            for i in range(N):
                T[i] = fabs(x[b, i] - x_c) / (v[b, i] + eps)
                dTx[i] = _sign(x[b, i] - x_c) / (v[b, i] + eps)
                dTv[i] = -fabs(x[b, i] - x_c) / ((v[b, i] + eps) * (v[b, i] + eps))
            for i in range(N):
                for j in range(i + 1, N):
                    if lane[b, i] == lane[b, j]:
                        dx = x[b, i] - x[b, j]
                        dv = v[b, i] - v[b, j]
                        ax = fabs(dx)
                        av = fabs(dv)
                        if av <= v_c:
                            ttc = ax / v_c
                            dtx = 1.0 / v_c
                            dtv = 0.0
                        else:
                            ttc = ax / av
                            dtx = 1.0 / av
                            dtv = -ax / (av * av)
                        den = ttc + eps
                        val = -1.0 / den
                        g = 1.0 / (den * den)
                        P[b, i, j] = w21 * val
                        P[b, j, i] = w21 * val
                        Px[b, i, j] = w21 * g * dtx * _sign(dx)
                        Px[b, j, i] = w21 * g * dtx * _sign(-dx)
                        Pv[b, i, j] = w21 * g * dtv * _sign(dv)
                        Pv[b, j, i] = w21 * g * dtv * _sign(-dv)
                    else:
                        ti = T[i]
                        tj = T[j]
                        root = sqrt(ti * tj)
                        diff = ti - tj
                        D = root * diff * diff + eps
                        val = -1.0 / D
                        P[b, i, j] = w22 * val
                        P[b, j, i] = w22 * val
                        if root > 0:
                            droot = tj / (2.0 * root)
                        else:
                            droot = 0.0
                        gi = (droot * diff * diff + 2.0 * root * diff) / (D * D)
                        if root > 0:
                            droot = ti / (2.0 * root)
                        else:
                            droot = 0.0
                        gj = (droot * diff * diff - 2.0 * root * diff) / (D * D)
                        Px[b, i, j] = w22 * gi * dTx[i]
                        Pv[b, i, j] = w22 * gi * dTv[i]
                        Px[b, j, i] = w22 * gj * dTx[j]
                        Pv[b, j, i] = w22 * gj * dTv[j]
    return P_a, Px_a, Pv_a


def feasible_bounds(double[:, ::1] x, double[:, ::1] v, double[:, ::1] phi,
                    long[:, ::1] leader, long[:, ::1] follower,
                    double dt, double tau_s, double length, double g, double vmax):
    cdef Py_ssize_t B = x.shape[0], N = x.shape[1]
    lo_a = np.empty((B, N))
    hi_a = np.empty((B, N))
    xn_a = np.empty(N)
    cdef double[:, ::1] lo = lo_a
    cdef double[:, ::1] hi = hi_a
    cdef double[::1] xn = xn_a
    cdef Py_ssize_t b, i
    cdef long k
    cdef double l, h, gap, cap, floor
    cdef bint empty
    with nogil:
        for b in range(B):
            for i in range(N):
                xn[i] = x[b, i] + v[b, i] * cos(phi[b, i]) * dt
            for i in range(N):
                l = -g
                h = g
                empty = False
                k = leader[b, i]
                if k >= 0:
                    gap = xn[k] - xn[i] - length
                    cap = v[b, k] + gap / tau_s
                    if cap < 0:
                        empty = True
                    elif cap < vmax:
                        h = min(h, (cap - v[b, i]) / dt)
                k = follower[b, i]
                if k >= 0:
                    gap = xn[i] - xn[k] - length
                    floor = v[b, k] - gap / tau_s
                    if floor > 0:
                        # an unreachable floor saturates at full acceleration
                        l = max(l, min(g, (floor - v[b, i]) / dt))
                if empty or l > h:
                    l = -g
                    h = -g
                lo[b, i] = l
                hi[b, i] = h
    return lo_a, hi_a


def collisions(double[:, ::1] x, double[:, ::1] y, double[:, ::1] phi, double length, double width):
    cdef Py_ssize_t B = x.shape[0], N = x.shape[1]
    ci_a = np.full(B, -1, dtype=np.int64)
    cj_a = np.full(B, -1, dtype=np.int64)
    mind_a = np.full(B, INFINITY)
    hx_a = np.empty(N)
    hy_a = np.empty(N)
    cdef long[::1] ci = ci_a
    cdef long[::1] cj = cj_a
    cdef double[::1] mind = mind_a
    cdef double[::1] hx = hx_a
    cdef double[::1] hy = hy_a
    cdef Py_ssize_t b, i, j
    cdef double c, s, gx, gy, d
    with nogil:
        for b in range(B):
            for i in range(N):
                c = fabs(cos(phi[b, i]))
                s = fabs(sin(phi[b, i]))
                hx[i] = 0.5 * (length * c + width * s)
                hy[i] = 0.5 * (length * s + width * c)
            for i in range(N):
                for j in range(i + 1, N):
                    gx = fabs(x[b, i] - x[b, j]) - (hx[i] + hx[j])
                    gy = fabs(y[b, i] - y[b, j]) - (hy[i] + hy[j])
                    if gx < 0 and gy < 0 and ci[b] < 0:
                        ci[b] = i
                        cj[b] = j
                    d = hypot(gx if gx > 0 else 0.0, gy if gy > 0 else 0.0)
                    if d < mind[b]:
                        mind[b] = d
    return ci_a, cj_a, mind_a
