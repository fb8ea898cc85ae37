"""Batched forced-merge simulator with reverse-mode differentiation.

All ``B`` scenarios of a batch advance in lockstep.  Per step:

1. collision check (a scenario that overlaps stops before acting);
2. neighbors, observations and actions for every vehicle, by kind
   (shared network, IDM, constant speed, or recorded replay);
3. TTC feasibility clamp for network-driven target-lane vehicles;
4. reward terms and potential at ``(s_t, a_t)``;
5. forward-Euler step with ``delta_f = 0``, speed clamp, and the merge snap
   (a ramp vehicle crossing ``x_c`` joins the target lane).

The objective is the batch mean of ``sum_t gamma^t R_t`` where
``R_t = sum_i c_i self_i + sum_{i<j} M_ij r_ij``.  With ``c = 1``, ``M = 1``
this is the total potential; with weights on a single agent it is that
agent's own return.  ``simulate(..., grad=True)`` back-propagates through
dynamics, rewards, IDM and the network.  Clamps use the straight-through
convention (derivative 1 inside or on the boundary, 0 outside) and the
feasibility bounds, neighbor identities and lane labels are treated as
constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mpgmerge import kernels
from mpgmerge.config import ExperimentConfig
from mpgmerge.dynamics import G, V_MAX
from mpgmerge.idm import idm_batch
from mpgmerge.policy import PolicyParams, backward, flatten_grads, forward, observation_batch, observation_vjp
from mpgmerge.rewards import RAMP, TARGET

NET, IDM, CONST, REPLAY = 0, 1, 2, 3
KIND_NAMES = {"net": NET, "ne": NET, "idm": IDM, "const": CONST, "constant": CONST, "replay": REPLAY}
TARGET_Y = 0.0


class NumericalError(ArithmeticError):
    def __init__(self, message: str, scenario_ids=()):
        super().__init__(message)
        self.scenario_ids = list(scenario_ids)


@dataclass
class ScenarioBatch:
    """Initial conditions for ``B`` scenarios of ``N`` vehicles (index 0 is the ego)."""

    x: np.ndarray
    v: np.ndarray
    y: np.ndarray
    lane: np.ndarray
    ids: np.ndarray
    replay_x: Optional[np.ndarray] = None  # (B, steps + 1, N), used for REPLAY vehicles
    replay_v: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.lane = np.asarray(self.lane, dtype=np.int64)
        self.ids = np.asarray(self.ids)

    @property
    def shape(self):
        return self.x.shape

    def subset(self, idx) -> "ScenarioBatch":
        rx = None if self.replay_x is None else self.replay_x[idx]
        rv = None if self.replay_v is None else self.replay_v[idx]
        return ScenarioBatch(self.x[idx], self.v[idx], self.y[idx], self.lane[idx], self.ids[idx], rx, rv)

    @classmethod
    def single(cls, x, v, lane, y=None, scenario_id=0, lane_width=3.6) -> "ScenarioBatch":
        lane = np.asarray(lane, dtype=np.int64)
        if y is None:
            y = np.where(lane == RAMP, TARGET_Y - lane_width, TARGET_Y)
        return cls(np.asarray(x, float)[None], np.asarray(v, float)[None], np.asarray(y, float)[None],
                   lane[None], np.array([scenario_id]))


@dataclass
class RewardWeights:
    """Agent weights ``c`` (N,) on self terms and symmetric pair weights ``M`` (N, N)."""

    c: np.ndarray
    M: np.ndarray

    @classmethod
    def potential(cls, n: int) -> "RewardWeights":
        return cls(np.ones(n), np.ones((n, n)) - np.eye(n))

    @classmethod
    def agent(cls, n: int, i: int = 0) -> "RewardWeights":
        c = np.zeros(n)
        c[i] = 1.0
        M = np.zeros((n, n))
        M[i, :] = 1.0
        M[:, i] = 1.0
        M[i, i] = 0.0
        return cls(c, M)


def parse_kinds(ego: str, others: str, n: int) -> np.ndarray:
    kinds = np.full(n, KIND_NAMES[others], dtype=np.int64)
    kinds[0] = KIND_NAMES[ego]
    return kinds


@dataclass
class SimResult:
    objective: np.ndarray          # (B,) discounted weighted return
    length: np.ndarray             # (B,) steps taken
    collided: np.ndarray           # (B,) bool
    ego_collided: np.ndarray       # (B,) bool
    pair: np.ndarray               # (B, 2) first overlapping pair or -1
    min_dist: np.ndarray           # (B,) min box distance over visited states
    final_x: np.ndarray            # (B, N)
    grad: Optional[np.ndarray] = None
    records: dict = field(default_factory=dict)

    @property
    def mean_objective(self) -> float:
        return float(self.objective.mean())


def _ego_overlap(x, y, length, width):
    """Whether vehicle 0 overlaps any other vehicle, per scenario (zero heading)."""
    gx = np.abs(x[:, 1:] - x[:, :1]) - length
    gy = np.abs(y[:, 1:] - y[:, :1]) - width
    return ((gx < 0) & (gy < 0)).any(axis=1)


def simulate(batch: ScenarioBatch, params: Optional[PolicyParams], cfg: ExperimentConfig,
             kinds: np.ndarray, weights: Optional[RewardWeights] = None, grad: bool = False,
             record: bool = False, steps: Optional[int] = None,
             ego_params: Optional[PolicyParams] = None) -> SimResult:
    """Roll out a batch; optionally return the gradient of the mean objective w.r.t. ``params``.

    ``ego_params`` (evaluation only) drives vehicle 0 with a different
    network than the other network-driven vehicles.
    """
    sc, rw, net = cfg.scenario, cfg.reward, cfg.network
    length_m, width_m = sc.geometry.body_length, sc.geometry.body_width
    dt, gamma = sc.dt, sc.gamma
    S = sc.steps if steps is None else steps
    B, N = batch.shape
    kinds = np.asarray(kinds, dtype=np.int64)
    if kinds.shape != (N,):
        raise ValueError(f"kinds must have shape ({N},)")
    weights = weights or RewardWeights.potential(N)
    is_net, is_idm, is_rep = kinds == NET, kinds == IDM, kinds == REPLAY
    if ego_params is not None and grad:
        raise ValueError("ego_params is for evaluation; gradients need a single parameter set")
    if is_net.any() and params is None and not (ego_params is not None and not is_net[1:].any()):
        raise ValueError("network-driven vehicles need parameters")
    if is_rep.any() and batch.replay_x is None:
        raise ValueError("replay vehicles need recorded trajectories")
    c, M = weights.c[None], weights.M[None]

    x, v, y, lane = batch.x.copy(), batch.v.copy(), batch.y.copy(), batch.lane.copy()
    phi = np.zeros((B, N))
    alive = np.ones(B, dtype=bool)
    length = np.full(B, S, dtype=np.int64)
    collided = np.zeros(B, dtype=bool)
    ego_hit = np.zeros(B, dtype=bool)
    pair = np.full((B, 2), -1, dtype=np.int64)
    min_dist = np.full(B, np.inf)
    objective = np.zeros(B)
    tape = []
    rec = {k: [] for k in ("x", "y", "v", "lane", "u", "u_net", "lo", "hi", "rewards", "potential", "alive")} \
        if record else None

    for t in range(S + 1):
        ci, cj, md = kernels.collisions(x, y, phi, length_m, width_m) if N > 1 else \
            (np.full(B, -1), np.full(B, -1), np.full(B, np.inf))
        min_dist = np.where(alive, np.minimum(min_dist, md), min_dist)
        hit = alive & (ci >= 0)
        if hit.any():
            collided |= hit
            length[hit] = t
            pair[hit, 0], pair[hit, 1] = ci[hit], cj[hit]
            ego_hit |= hit & _ego_overlap(x, y, length_m, width_m)
            alive &= ~hit
        if rec is not None:
            for k, a in (("x", x), ("y", y), ("v", v), ("lane", lane)):
                rec[k].append(a.copy())
        if t == S or not alive.any():
            break

        lead_o, foll_o = kernels.neighbors(x, lane, True)
        lead_s, foll_s = kernels.neighbors(x, lane, False)
        u = np.zeros((B, N))
        u_net = np.zeros((B, N))
        cache = None
        if is_net.any():
            obs = observation_batch(x, v, lane, lead_o, foll_o, rw.x_c, net)
            if params is not None:
                out, cache = forward(params, obs, return_cache=True)
            else:
                out = np.zeros((B, N))
            if ego_params is not None:
                out[:, 0] = forward(ego_params, obs[:, 0])
            u_net = np.where(is_net[None], out, 0.0)
        if rw.virtual_projection:
            # ramp network vehicles are projected as if already in the target lane
            lane_f = np.where(is_net[None] & (lane == RAMP), TARGET, lane)
            lead_f, foll_f = kernels.neighbors(x, lane_f, False)
        else:
            lane_f, lead_f, foll_f = lane, lead_s, foll_s
        lo, hi = kernels.feasible_bounds(x, v, phi, lead_f, foll_f, dt, rw.tau_s,
                                         length_m + rw.min_gap, G, V_MAX)
        proj = is_net[None] & (lane_f == TARGET)
        lo = np.where(proj, lo, -G)
        hi = np.where(proj, hi, G)
        u = np.where(is_net[None], np.clip(u_net, lo, hi), 0.0)
        ins = ((u_net >= lo) & (u_net <= hi)).astype(float)
        idm_part = None
        if is_idm.any():
            a_idm, ins_idm, idm_part = idm_batch(x, v, lead_s, cfg.evaluation.idm, length_m)
            u = np.where(is_idm[None], a_idm, u)
        if is_rep.any():
            acc = (batch.replay_v[:, t + 1] - batch.replay_v[:, t]) / dt
            u = np.where(is_rep[None], acc, u)

        P, Px, Pv = kernels.pair_terms(x, v, lane, rw.v_c, rw.eps, rw.x_c, rw.w21, rw.w22)
        self_r = -rw.w11 * (v - rw.v_d) ** 2 - rw.w12 * u * u
        R = (c * self_r).sum(axis=1) + 0.5 * (M * P).sum(axis=(1, 2))
        disc = gamma ** t
        objective += np.where(alive, disc * R, 0.0)
        if rec is not None:
            iu = np.triu_indices(N, 1)
            rec["u"].append(u.copy())
            rec["u_net"].append(u_net.copy())
            rec["lo"].append(lo)
            rec["hi"].append(hi)
            rec["rewards"].append(self_r + P.sum(axis=2))
            rec["potential"].append(self_r.sum(axis=1) + P[:, iu[0], iu[1]].sum(axis=1))
            rec["alive"].append(alive.copy())

        v_raw = v + u * dt
        vmask = ((v_raw >= 0.0) & (v_raw <= V_MAX)).astype(float)
        xn = x + v * np.cos(phi) * dt
        yn = y + v * np.sin(phi) * dt
        vn = np.clip(v_raw, 0.0, V_MAX)
        if is_rep.any():
            xn = np.where(is_rep[None], batch.replay_x[:, t + 1], xn)
            vn = np.where(is_rep[None], batch.replay_v[:, t + 1], vn)
        if grad:
            tape.append((alive.copy(), disc, v, u, Px, Pv, cache, ins, vmask,
                         lead_o, foll_o, lead_s, idm_part))
        keep = alive[:, None]
        x = np.where(keep, xn, x)
        v = np.where(keep, vn, v)
        y = np.where(keep, yn, y)
        merged = keep & (lane == RAMP) & (x >= rw.x_c)
        lane = np.where(merged, TARGET, lane)
        y = np.where(merged, TARGET_Y, y)

    result = SimResult(objective, length, collided, ego_hit, pair, min_dist, x)
    if rec is not None:
        result.records = {k: np.stack(a, axis=1) if a else np.zeros((B, 0)) for k, a in rec.items()}
    if grad:
        result.grad = _backprop(tape, params, cfg, kinds, weights, batch, B, N)
    return result


def _backprop(tape, params, cfg, kinds, weights, batch, B, N):
    rw, net, dt = cfg.reward, cfg.network, cfg.scenario.dt
    is_net, is_idm, is_rep = kinds == NET, kinds == IDM, kinds == REPLAY
    c, M = weights.c[None], weights.M[None]
    gtheta = np.zeros_like(params.flat()) if params is not None else np.zeros(0)
    ax = np.zeros((B, N))
    av = np.zeros((B, N))
    rows = np.broadcast_to(np.arange(B)[:, None], (B, N))
    for alive, disc, v, u, Px, Pv, cache, ins, vmask, lead_o, foll_o, lead_s, idm_part in reversed(tape):
        live = alive[:, None].astype(float)
        # recorded vehicles' next states are data, not functions of this step
        ax = np.where(is_rep[None], 0.0, ax)
        av = np.where(is_rep[None], 0.0, av)
        # x' = x + v dt, v' = clip(v + u dt); frozen scenarios pass adjoints through unchanged
        g_vn = av * vmask * live
        au = g_vn * dt
        av = av * (1.0 - live) + live * (ax * dt + g_vn)
        # reward R_t(x, v, u)
        w = disc * live
        ax = ax + w * (M * Px).sum(axis=2)
        av = av + w * ((M * Pv).sum(axis=2) - 2.0 * rw.w11 * c * (v - rw.v_d))
        au = au - w * 2.0 * rw.w12 * c * u
        if is_net.any():
            up = np.where(is_net[None], au * ins, 0.0)
            grads, gobs = backward(params, cache, up)
            gtheta += flatten_grads(grads)
            gx, gv = observation_vjp(gobs, lead_o, foll_o, net)
            ax = ax + gx
            av = av + gv
        if idm_part is not None:
            au_i = np.where(is_idm[None], au, 0.0)
            da_dx, da_dv, da_dxl, da_dvl = idm_part
            ax = ax + au_i * da_dx
            av = av + au_i * da_dv
            has = lead_s >= 0
            np.add.at(ax, (rows[has], lead_s[has]), (au_i * da_dxl)[has])
            np.add.at(av, (rows[has], lead_s[has]), (au_i * da_dvl)[has])
        bad = ~(np.isfinite(ax).all(axis=1) & np.isfinite(av).all(axis=1))
        if bad.any():
            raise NumericalError("non-finite gradient in rollout", batch.ids[bad].tolist())
    gtheta /= B
    if not np.all(np.isfinite(gtheta)):
        raise NumericalError("non-finite parameter gradient", batch.ids.tolist())
    return gtheta
