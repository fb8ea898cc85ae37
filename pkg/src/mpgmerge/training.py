"""Potential-function gradient ascent for the shared merge policy.

Each epoch rolls the current policy out on a batch of sampled scenarios,
differentiates the mean discounted total potential through the rollout and
takes a clipped gradient step on the shared parameters.  The parameters are
unconstrained, so the projection step of projected ascent is the identity.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from mpgmerge.config import ConfigError, ExperimentConfig, ScenarioConfig
from mpgmerge.policy import PolicyParams, forward, observation_batch
from mpgmerge.rewards import RAMP, TARGET
from mpgmerge.sim import NET, TARGET_Y, NumericalError, RewardWeights, ScenarioBatch, simulate
from mpgmerge import kernels


@dataclass
class Trajectory:
    """One rollout: ``L + 1`` states, ``L`` joint actions, rewards and potentials."""

    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    lane: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    potential: np.ndarray
    cause: str
    seed: Optional[int] = None
    scenario_id: Optional[int] = None

    def __len__(self) -> int:
        return len(self.potential)


def _strata(rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
    """One uniform draw from each of ``n`` equal-width strata of ``[lo, hi]``."""
    edges = np.linspace(lo, hi, n + 1)
    return edges[:-1] + rng.random(n) * np.diff(edges)


def _lane_ok(x: np.ndarray, v: np.ndarray, sc: ScenarioConfig) -> bool:
    """Bumper headway and TTC constraints between successive target-lane vehicles."""
    if len(x) < 2:
        return True
    order = np.argsort(x, kind="stable")
    xs, vs = x[order], v[order]
    gap = np.diff(xs) - sc.geometry.body_length
    closing = vs[:-1] - vs[1:]  # follower speed minus leader speed
    if np.any(gap < sc.min_headway):
        return False
    with np.errstate(divide="ignore"):
        ttc = np.where(closing > 0, gap / np.where(closing > 0, closing, 1.0), np.inf)
    return bool(np.all(ttc >= sc.min_ttc))


def sample_initial_state(sc: ScenarioConfig, rng: np.random.Generator):
    """Stratified draw of one scenario, resampled until the lane constraints hold.

    Vehicle 0 is the ramp ego; 1..n_leaders are target-lane vehicles ahead of
    it (nearest first), the rest are followers behind it (nearest first).
    Positions are stratified over ``lane_span`` on each side of the ego and
    speeds over ``lane_v_range`` with a random stratum-to-vehicle assignment.
    """
    nl, nf = sc.n_leaders, sc.n_followers
    n_lane = nl + nf
    for _ in range(sc.max_rejections + 1):
        x_e = rng.uniform(*sc.ego_x_range)
        v_e = rng.uniform(*sc.ego_v_range)
        lead_x = x_e + _strata(rng, nl, 0.0, sc.lane_span) if nl else np.zeros(0)
        foll_x = x_e - _strata(rng, nf, 0.0, sc.lane_span) if nf else np.zeros(0)
        lane_x = np.concatenate([np.sort(lead_x), np.sort(foll_x)[::-1]])
        lane_v = rng.permutation(_strata(rng, n_lane, *sc.lane_v_range)) if n_lane else np.zeros(0)
        if _lane_ok(lane_x, lane_v, sc):
            x = np.concatenate([[x_e], lane_x])
            v = np.concatenate([[v_e], lane_v])
            lane = np.array([RAMP] + [TARGET] * n_lane, dtype=np.int64)
            y = np.where(lane == RAMP, TARGET_Y - sc.lane_width, TARGET_Y)
            return x, v, y, lane
    raise ConfigError(f"no feasible initial state after {sc.max_rejections} rejections; "
                      "widen scenario.lane_span or relax min_headway/min_ttc",
                      ["scenario.lane_span", "scenario.min_headway", "scenario.min_ttc"])


def sample_initial_states(cfg: ExperimentConfig, rng: np.random.Generator, count: int = 1,
                          first_id: int = 0) -> ScenarioBatch:
    sc = cfg.scenario
    draws = [sample_initial_state(sc, rng) for _ in range(count)]
    x, v, y, lane = (np.stack([d[k] for d in draws]) for k in range(4))
    return ScenarioBatch(x, v, y, lane, np.arange(first_id, first_id + count))


def trajectories(batch: ScenarioBatch, params: Optional[PolicyParams], cfg: ExperimentConfig,
                 kinds=None, seed: Optional[int] = None) -> list[Trajectory]:
    """Recorded rollouts, one :class:`Trajectory` per scenario."""
    N = batch.shape[1]
    kinds = np.full(N, NET) if kinds is None else kinds
    res = simulate(batch, params, cfg, kinds, record=True)
    out = []
    for b in range(batch.shape[0]):
        L = int(res.length[b])
        r = res.records
        out.append(Trajectory(
            x=r["x"][b, :L + 1], y=r["y"][b, :L + 1], v=r["v"][b, :L + 1], lane=r["lane"][b, :L + 1],
            actions=r["u"][b, :L], rewards=r["rewards"][b, :L], potential=r["potential"][b, :L],
            cause="collision" if res.collided[b] else "horizon", seed=seed,
            scenario_id=int(batch.ids[b])))
    return out


def rollout(params: PolicyParams, s0: ScenarioBatch, cfg: ExperimentConfig) -> Trajectory:
    """Shared-policy rollout of a single scenario."""
    return trajectories(s0.subset(slice(0, 1)), params, cfg)[0]


def total_potential(traj, gamma: float) -> float:
    """``sum_t gamma^t phi_t`` over a trajectory (or a raw potential sequence)."""
    phi = np.asarray(traj.potential if hasattr(traj, "potential") else traj, dtype=float)
    if phi.size == 0:
        return 0.0
    return float(np.sum(gamma ** np.arange(phi.size) * phi))


def potential_gradient(params: PolicyParams, batch: ScenarioBatch, cfg: ExperimentConfig,
                       kinds=None, weights: Optional[RewardWeights] = None):
    """Mean discounted objective over the batch and its gradient (flat vector)."""
    N = batch.shape[1]
    kinds = np.full(N, NET) if kinds is None else kinds
    res = simulate(batch, params, cfg, kinds, weights=weights, grad=True)
    return res.mean_objective, res.grad


def probe_actions(params: PolicyParams, probe: ScenarioBatch, cfg: ExperimentConfig) -> np.ndarray:
    """Raw network actions of every vehicle at each probe state."""
    lead, foll = kernels.neighbors(probe.x, probe.lane, True)
    obs = observation_batch(probe.x, probe.v, probe.lane, lead, foll, cfg.reward.x_c, cfg.network)
    return forward(params, obs)


def mean_squared_action_difference(params_a: PolicyParams, params_b: PolicyParams,
                                   probe_states: ScenarioBatch, cfg: ExperimentConfig) -> float:
    if probe_states.shape[0] == 0:
        raise ValueError("probe set must be non-empty")
    ua = probe_actions(params_a, probe_states, cfg)
    ub = probe_actions(params_b, probe_states, cfg)
    return float(np.mean((ua - ub) ** 2))


@dataclass
class TrainResult:
    params: PolicyParams
    logs: list = field(default_factory=list)
    seed: int = 0


def step_size(cfg: ExperimentConfig, epoch: int) -> float:
    t = cfg.trainer
    return t.eta / (1.0 + t.eta_decay * epoch)


def train_seed(cfg: ExperimentConfig, seed: int, kinds=None, weights: Optional[RewardWeights] = None,
               log: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Gradient ascent for one seed.

    Log records carry ``epoch, seed, eta, mean_potential`` (training batch),
    ``frozen_potential`` (fixed evaluation batch), ``action_diff`` (probe
    set, between the parameters before and after the update) and
    ``grad_norm``.  ``mean_potential`` is the weighted objective, i.e. the
    ego return when ``weights`` selects one agent.
    """
    t = cfg.trainer
    N = cfg.scenario.n_agents
    kinds = np.full(N, NET) if kinds is None else np.asarray(kinds)
    rng = np.random.default_rng([seed, 0])
    params = PolicyParams.init(N, cfg.network, rng)
    data_rng = np.random.default_rng([seed, 1])
    frozen = sample_initial_states(cfg, data_rng, t.frozen_batch_size, first_id=0)
    probe = sample_initial_states(cfg, data_rng, t.probe_size, first_id=t.frozen_batch_size)
    noise_rng = np.random.default_rng([seed, 2])
    next_id = t.frozen_batch_size + t.probe_size
    logs = []
    for epoch in range(t.epochs + 1):
        frozen_obj = simulate(frozen, params, cfg, kinds, weights=weights).mean_objective
        if epoch == t.epochs:
            rec = {"epoch": epoch, "seed": seed, "frozen_potential": frozen_obj, "final": True}
            logs.append(rec)
            if log:
                log(rec)
            break
        if t.fresh_batches:
            batch = sample_initial_states(cfg, data_rng, t.batch_size, first_id=next_id)
            next_id += t.batch_size
        else:
            batch = frozen
        obj, g = potential_gradient(params, batch, cfg, kinds, weights)
        if not math.isfinite(obj):
            raise NumericalError(f"objective diverged at epoch {epoch} (seed {seed})", batch.ids.tolist())
        norm = float(np.linalg.norm(g))
        if norm > t.grad_clip:
            g = g * (t.grad_clip / norm)
        eta = step_size(cfg, epoch)
        theta = params.flat() + eta * g
        if t.param_noise > 0:
            theta = theta + t.param_noise * noise_rng.standard_normal(theta.size)
        new = params.with_flat(theta)
        rec = {"epoch": epoch, "seed": seed, "eta": eta, "mean_potential": obj,
               "frozen_potential": frozen_obj, "grad_norm": norm,
               "action_diff": mean_squared_action_difference(params, new, probe, cfg)}
        logs.append(rec)
        if log:
            log(rec)
        params = new
    return TrainResult(params, logs, seed)


def train(cfg: ExperimentConfig, log: Optional[Callable[[dict], None]] = None,
          kinds=None, weights: Optional[RewardWeights] = None) -> dict:
    """Train one policy per configured seed; returns ``{"params": [...], "logs": [...]}``."""
    results = [train_seed(cfg, s, kinds, weights, log) for s in cfg.seeds]
    return {"params": [r.params for r in results], "logs": [rec for r in results for rec in r.logs],
            "results": results}


def write_jsonl(path, records, timing_path=None) -> None:
    """Write log records; wall-clock data goes to a separate file so logs stay reproducible."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if timing_path is not None:
        with open(timing_path, "w") as fh:
            fh.write(json.dumps({"written_at": time.time()}) + "\n")
