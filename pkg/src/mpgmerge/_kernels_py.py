"""Pure-Python/NumPy versions of the per-step simulation kernels.

Every function takes batched ``(B, N)`` float64 arrays and mirrors the
compiled module ``mpgmerge._kernels`` argument for argument.
"""

import numpy as np


def neighbors(x, lane, ramp_sees_target):
    """Immediate leader and follower indices (``-1`` when absent).

    Vehicle ``j`` is visible to ``i`` when both share a lane, or, with
    ``ramp_sees_target``, when ``i`` is on the ramp (lane 0) and ``j`` in the
    target lane (lane 1).  Ordering key is ``(x, index)``.
    """
    B, N = x.shape
    leader = np.full((B, N), -1, dtype=np.int64)
    follower = np.full((B, N), -1, dtype=np.int64)
    idx = np.arange(N)
    for b in range(B):
        xb, lb = x[b], lane[b]
        for i in range(N):
            vis = (lb == lb[i])
            if ramp_sees_target and lb[i] == 0:
                vis = vis | (lb == 1)
            vis[i] = False
            ahead = vis & ((xb > xb[i]) | ((xb == xb[i]) & (idx > i)))
            behind = vis & ~ahead
            if ahead.any():
                cand = idx[ahead]
                leader[b, i] = cand[np.lexsort((cand, xb[cand]))[0]]
            if behind.any():
                cand = idx[behind]
                follower[b, i] = cand[np.lexsort((cand, xb[cand]))[-1]]
    return leader, follower


def pair_terms(x, v, lane, v_c, eps, x_c, w21, w22):
    """Weighted pair rewards ``P[b, i, j]`` and partials w.r.t. ``x_i``, ``v_i``."""
    dx = x[:, :, None] - x[:, None, :]
    dv = v[:, :, None] - v[:, None, :]
    ax, av = np.abs(dx), np.abs(dv)
    same = lane[:, :, None] == lane[:, None, :]

    slow = av <= v_c
    safe_av = np.where(slow, 1.0, av)
    ttc = np.where(slow, ax / v_c, ax / safe_av)
    den = ttc + eps
    p_same = -1.0 / den
    g_t = 1.0 / den ** 2
    dttc_dax = np.where(slow, 1.0 / v_c, 1.0 / safe_av)
    dttc_dav = np.where(slow, 0.0, -ax / safe_av ** 2)
    px_same = g_t * dttc_dax * np.sign(dx)
    pv_same = g_t * dttc_dav * np.sign(dv)

    T = np.abs(x - x_c) / (v + eps)
    dT_dx = np.sign(x - x_c) / (v + eps)
    dT_dv = -np.abs(x - x_c) / (v + eps) ** 2
    Ti, Tj = T[:, :, None], T[:, None, :]
    root = np.sqrt(Ti * Tj)
    diff = Ti - Tj
    D = root * diff ** 2 + eps
    p_gap = -1.0 / D
    with np.errstate(divide="ignore", invalid="ignore"):
        droot = np.where(root > 0, Tj / (2.0 * root), 0.0)
    dD_dTi = droot * diff ** 2 + 2.0 * root * diff
    g_g = dD_dTi / D ** 2
    px_gap = g_g * dT_dx[:, :, None]
    pv_gap = g_g * dT_dv[:, :, None]

    P = np.where(same, w21 * p_same, w22 * p_gap)
    Px = np.where(same, w21 * px_same, w22 * px_gap)
    Pv = np.where(same, w21 * pv_same, w22 * pv_gap)
    N = x.shape[1]
    diag = np.eye(N, dtype=bool)[None]
    P = np.where(diag, 0.0, P)
    Px = np.where(diag, 0.0, Px)
    Pv = np.where(diag, 0.0, Pv)
    # mirror the upper triangle so P[i, j] and P[j, i] are the same float
    iu = np.triu_indices(N, 1)
    P[:, iu[1], iu[0]] = P[:, iu[0], iu[1]]
    return P, Px, Pv


def feasible_bounds(x, v, phi, leader, follower, dt, tau_s, length, g, vmax):
    """One-step TTC feasibility interval per vehicle, emergency braking if empty.

    Gaps are signed: a longitudinally overlapping (virtual) neighbour pushes
    the vehicle back out rather than merely matching its speed.  Only a
    violated leader cap, or a cap below the follower floor, triggers braking;
    a follower floor out of reach saturates at ``+g``.
    """
    B, N = x.shape
    xn = x + v * np.cos(phi) * dt
    lo = np.full((B, N), -g)
    hi = np.full((B, N), g)
    empty = np.zeros((B, N), dtype=bool)
    rows = np.arange(B)[:, None]

    has_l = leader >= 0
    li = np.where(has_l, leader, 0)
    gap_l = xn[rows, li] - xn - length
    cap = v[rows, li] + gap_l / tau_s
    empty |= has_l & (cap < 0)
    bound = (cap - v) / dt
    hi = np.where(has_l & (cap < vmax), np.minimum(hi, bound), hi)

    has_f = follower >= 0
    fi = np.where(has_f, follower, 0)
    gap_f = xn - xn[rows, fi] - length
    floor = v[rows, fi] - gap_f / tau_s
    bound = np.minimum(g, (floor - v) / dt)  # unreachable floor: pull away at full throttle
    lo = np.where(has_f & (floor > 0), np.maximum(lo, bound), lo)

    empty |= lo > hi
    lo = np.where(empty, -g, lo)
    hi = np.where(empty, -g, hi)
    return lo, hi


def collisions(x, y, phi, length, width):
    """First overlapping pair per scenario and the minimum box-to-box distance."""
    B, N = x.shape
    c, s = np.abs(np.cos(phi)), np.abs(np.sin(phi))
    hx = 0.5 * (length * c + width * s)
    hy = 0.5 * (length * s + width * c)
    gx = np.abs(x[:, :, None] - x[:, None, :]) - (hx[:, :, None] + hx[:, None, :])
    gy = np.abs(y[:, :, None] - y[:, None, :]) - (hy[:, :, None] + hy[:, None, :])
    overlap = (gx < 0) & (gy < 0)
    dist = np.hypot(np.maximum(gx, 0.0), np.maximum(gy, 0.0))
    iu = np.triu_indices(N, 1)
    ov = overlap[:, iu[0], iu[1]]
    first = np.where(ov.any(axis=1), ov.argmax(axis=1), -1)
    ci = np.where(first >= 0, iu[0][np.maximum(first, 0)], -1)
    cj = np.where(first >= 0, iu[1][np.maximum(first, 0)], -1)
    mind = dist[:, iu[0], iu[1]].min(axis=1) if N > 1 else np.full(B, np.inf)
    return ci.astype(np.int64), cj.astype(np.int64), mind
