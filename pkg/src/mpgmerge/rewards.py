"""Forced-merge reward terms, per-agent rewards and the shared potential.

Lane codes: ``0`` on-ramp, ``1`` target lane.  Pairs of vehicles in the same
lane interact through the TTC term, pairs in different lanes through the
conflict-point time-gap term.
"""

from __future__ import annotations

import math
from typing import Sequence

from mpgmerge.config import MergeRewardSpec

RAMP, TARGET = 0, 1


def speed_tracking_reward(v: float, v_d: float) -> float:
    return -(v - v_d) ** 2


def comfort_reward(u: float) -> float:
    return -u * u


def same_lane_ttc_reward(x_i: float, v_i: float, x_j: float, v_j: float, spec: MergeRewardSpec) -> float:
    gap = abs(x_i - x_j)
    dv = abs(v_i - v_j)
    if dv <= spec.v_c:
        return -1.0 / (gap / spec.v_c + spec.eps)
    return -1.0 / (gap / dv + spec.eps)


def time_to_conflict(x: float, v: float, spec: MergeRewardSpec) -> float:
    return abs(x - spec.x_c) / (v + spec.eps)


def conflict_time_gap_reward(x_i: float, v_i: float, x_j: float, v_j: float, spec: MergeRewardSpec) -> float:
    t_i = time_to_conflict(x_i, v_i, spec)
    t_j = time_to_conflict(x_j, v_j, spec)
    return -1.0 / (math.sqrt(t_i * t_j) * (t_i - t_j) ** 2 + spec.eps)


def pair_reward(x_i, v_i, lane_i, x_j, v_j, lane_j, spec: MergeRewardSpec) -> float:
    """Weighted joint term for one pair, evaluated in canonical argument order."""
    if lane_i == lane_j:
        return spec.w21 * same_lane_ttc_reward(x_i, v_i, x_j, v_j, spec)
    return spec.w22 * conflict_time_gap_reward(x_i, v_i, x_j, v_j, spec)


def self_reward(v: float, u: float, spec: MergeRewardSpec) -> float:
    return spec.w11 * speed_tracking_reward(v, spec.v_d) + spec.w12 * comfort_reward(u)


def agent_reward(x: Sequence[float], v: Sequence[float], u: Sequence[float], i: int,
                 spec: MergeRewardSpec, lanes: Sequence[int]) -> float:
    total = 0.0
    for j in range(len(x)):
        if j == i:
            continue
        a, b = (i, j) if i < j else (j, i)
        total += pair_reward(x[a], v[a], lanes[a], x[b], v[b], lanes[b], spec)
    return self_reward(v[i], u[i], spec) + total


def potential_function(x: Sequence[float], v: Sequence[float], u: Sequence[float],
                       spec: MergeRewardSpec, lanes: Sequence[int]) -> float:
    n = len(x)
    selfs = sum(self_reward(v[i], u[i], spec) for i in range(n))
    pairs = 0.0
    for i in range(n):
        for j in range(i):
            pairs += pair_reward(x[j], v[j], lanes[j], x[i], v[i], lanes[i], spec)
    return selfs + pairs
