"""Intelligent Driver Model car-following law, scalar and batched with partials."""

from __future__ import annotations

import math

import numpy as np

from mpgmerge.config import IdmConfig
from mpgmerge.dynamics import G

MIN_GAP = 0.01  # keeps (s*/s)^2 finite when boxes touch


def idm_acceleration(gap: float, v: float, dv_closing: float, p: IdmConfig = IdmConfig(),
                     g: float = G) -> float:
    """IDM acceleration clamped to ``[-g, g]``; ``gap = inf`` means free road."""
    free = 1.0 - (v / p.v0) ** p.delta
    if math.isinf(gap):
        a = p.a_max * free
    else:
        s_star = p.s0 + max(0.0, v * p.time_headway + v * dv_closing / (2.0 * math.sqrt(p.a_max * p.b)))
        a = p.a_max * (free - (s_star / max(gap, MIN_GAP)) ** 2)
    return min(max(a, -g), g)


def idm_batch(x, v, leader, p: IdmConfig, length: float, g: float = G):
    """Batched IDM with bumper gaps.

    Returns ``(a, inside, partials)`` where ``partials`` holds
    ``da/dx_i, da/dv_i, da/dx_leader, da/dv_leader`` (zero where there is no
    leader or the clamp is active).
    """
    B, N = x.shape
    rows = np.arange(B)[:, None]
    has = leader >= 0
    li = np.where(has, leader, 0)
    xl, vl = x[rows, li], v[rows, li]
    root = 2.0 * math.sqrt(p.a_max * p.b)
    raw_gap = xl - x - length
    gap = np.maximum(raw_gap, MIN_GAP)
    dgap = (raw_gap > MIN_GAP).astype(float)
    dyn = v * p.time_headway + v * (v - vl) / root
    active = dyn > 0
    s_star = p.s0 + np.where(active, dyn, 0.0)
    ratio = s_star / gap
    a_raw = p.a_max * (1.0 - (v / p.v0) ** p.delta - np.where(has, ratio ** 2, 0.0))
    a = np.clip(a_raw, -g, g)
    inside = ((a_raw >= -g) & (a_raw <= g)).astype(float)

    d_free = -p.a_max * p.delta * v ** (p.delta - 1) / p.v0 ** p.delta
    d_sstar = np.where(has, -2.0 * p.a_max * ratio / gap, 0.0)
    d_gap = np.where(has, 2.0 * p.a_max * ratio ** 2 / gap, 0.0) * dgap
    ds_dv = np.where(active, p.time_headway + (2.0 * v - vl) / root, 0.0)
    ds_dvl = np.where(active, -v / root, 0.0)
    da_dx = -d_gap * inside
    da_dv = (d_free + d_sstar * ds_dv) * inside
    da_dxl = d_gap * inside
    da_dvl = d_sstar * ds_dvl * inside
    return a, inside, (da_dx, da_dv, da_dxl, da_dvl)
