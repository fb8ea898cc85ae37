"""Baseline policies, the single-agent RL ego trainer, and the evaluation harness.

Metrics follow the statistical tables of the merge study:

* ``collision_rate``: scenarios in which the ego is part of a collision;
* ``failure_rate``: scenarios that reach the horizon with the ego still
  short of the conflict point;
* ``avg_min_inter_vehicle_distance``: mean over scenarios of the smallest
  box-to-box distance between any two vehicles;
* ``avg_ego_speed``, ``avg_accel_magnitude``, ``avg_jerk_magnitude``: ego
  averages over time within each scenario, then over scenarios.  Jerk is the
  first difference of the commanded acceleration divided by ``dt``.

Rates are counts (out of ``n_scenarios``) averaged over seeds, so they are
multiples of ``1 / len(seeds)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from mpgmerge.config import ExperimentConfig
from mpgmerge.idm import idm_acceleration  # re-exported
from mpgmerge.policy import PolicyParams
from mpgmerge.sim import IDM, NET, RewardWeights, ScenarioBatch, SimResult, parse_kinds, simulate
from mpgmerge.training import sample_initial_states, train

__all__ = ["idm_acceleration", "constant_speed_policy", "train_single_agent", "MetricsReport",
           "scenario_metrics", "run_evaluation", "evaluation_batch"]

PolicyLike = Union[PolicyParams, str, None]


def constant_speed_policy(*_args, **_kwargs) -> float:
    """Zero acceleration, whatever the state."""
    return 0.0


def single_agent_kinds(n_agents: int) -> np.ndarray:
    kinds = np.full(n_agents, IDM, dtype=np.int64)
    kinds[0] = NET
    return kinds


def train_single_agent(cfg: ExperimentConfig, log: Optional[Callable[[dict], None]] = None) -> dict:
    """Same trainer, but the ego ascends its own return against IDM surroundings."""
    n = cfg.scenario.n_agents
    return train(cfg, log=log, kinds=single_agent_kinds(n), weights=RewardWeights.agent(n, 0))


@dataclass
class MetricsReport:
    collision_rate: float
    failure_rate: float
    avg_min_inter_vehicle_distance: float
    avg_ego_speed: float
    avg_accel_magnitude: float
    avg_jerk_magnitude: float
    n_scenarios: int
    seeds: list
    avg_ego_speed_pooled: float = float("nan")
    per_seed: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def scenario_metrics(res: SimResult, x_c: float, dt: float) -> dict:
    """Per-scenario ego metrics from a recorded rollout."""
    rec = res.records
    B = res.length.size
    out = {"collision": res.ego_collided.astype(float), "min_dist": res.min_dist.copy(),
           "failure": ((~res.collided) & (res.final_x[:, 0] < x_c)).astype(float),
           "speed": np.zeros(B), "accel": np.zeros(B), "jerk": np.full(B, np.nan),
           "speed_sum": np.zeros(B), "speed_n": np.zeros(B)}
    for b in range(B):
        L = int(res.length[b])
        v = rec["v"][b, :L + 1, 0]
        u = rec["u"][b, :L, 0]
        out["speed"][b] = v.mean()
        out["speed_sum"][b] = v.sum()
        out["speed_n"][b] = v.size
        out["accel"][b] = np.abs(u).mean() if L else 0.0
        if L >= 2:
            out["jerk"][b] = np.abs(np.diff(u) / dt).mean()
    return out


def evaluation_batch(cfg: ExperimentConfig, seed: int, n: Optional[int] = None) -> ScenarioBatch:
    """The evaluation scenarios for one seed, disjoint from training draws."""
    n = cfg.evaluation.n_scenarios if n is None else n
    rng = np.random.default_rng([cfg.evaluation.seed_offset, seed])
    return sample_initial_states(cfg, rng, n)


def _params_for(policy, k: int):
    if isinstance(policy, (list, tuple)):
        return policy[k % len(policy)]
    return policy


def run_evaluation(ego_policy, surrounding_kind: str, cfg: ExperimentConfig,
                   n_scenarios: Optional[int] = None, seeds: Optional[Sequence[int]] = None,
                   surrounding_params=None, scenarios: Optional[ScenarioBatch] = None,
                   on_result: Optional[Callable] = None) -> MetricsReport:
    """Roll out every scenario for every seed and fold the six metrics.

    ``ego_policy`` is a :class:`PolicyParams` (or one per seed), ``"idm"`` or
    ``"const"``.  ``surrounding_kind`` is ``ne``, ``idm``, ``const`` or
    ``replay``; ``ne`` surroundings use ``surrounding_params`` (defaulting to
    the ego network, i.e. the shared NE policy).  Replay needs ``scenarios``
    carrying recorded trajectories.  ``on_result(seed, batch, result)`` is
    called after each seed (used for trace output).
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    ego_kind = ego_policy if isinstance(ego_policy, str) else "net"
    n_agents = cfg.scenario.n_agents if scenarios is None else scenarios.shape[1]
    kinds = parse_kinds(ego_kind, surrounding_kind, n_agents)
    if surrounding_kind == "replay" and scenarios is None:
        raise ValueError("replay surroundings need recorded scenarios")
    dt, x_c = cfg.scenario.dt, cfg.reward.x_c
    per_seed = []
    for k, seed in enumerate(seeds):
        batch = scenarios if scenarios is not None else evaluation_batch(cfg, seed, n_scenarios)
        if batch.shape[0] == 0:
            raise ValueError("empty scenario list")
        ego_p = _params_for(ego_policy, k) if ego_kind == "net" else None
        sur_p = _params_for(surrounding_params, k) if surrounding_params is not None else ego_p
        if kinds[1:].tolist().count(NET) and sur_p is None:
            raise ValueError("NE surroundings need a trained network")
        if kinds[0] == NET and sur_p is not ego_p and kinds[1:].tolist().count(NET):
            res = simulate(batch, sur_p, cfg, kinds, record=True, ego_params=ego_p)
        else:
            res = simulate(batch, ego_p if ego_p is not None else sur_p, cfg, kinds, record=True)
        m = scenario_metrics(res, x_c, dt)
        jerk = m["jerk"][np.isfinite(m["jerk"])]
        per_seed.append({
            "seed": int(seed), "collisions": float(m["collision"].sum()), "failures": float(m["failure"].sum()),
            "min_dist": float(m["min_dist"].mean()), "speed": float(m["speed"].mean()),
            "speed_pooled": float(m["speed_sum"].sum() / m["speed_n"].sum()),
            "accel": float(m["accel"].mean()), "jerk": float(jerk.mean()) if jerk.size else 0.0,
            "n": int(batch.shape[0])})
        if on_result is not None:
            on_result(seed, batch, res)
    avg = lambda key: float(np.mean([p[key] for p in per_seed]))
    return MetricsReport(collision_rate=avg("collisions"), failure_rate=avg("failures"),
                         avg_min_inter_vehicle_distance=avg("min_dist"), avg_ego_speed=avg("speed"),
                         avg_accel_magnitude=avg("accel"), avg_jerk_magnitude=avg("jerk"),
                         n_scenarios=per_seed[0]["n"], seeds=[int(s) for s in seeds],
                         avg_ego_speed_pooled=avg("speed_pooled"), per_seed=per_seed)
