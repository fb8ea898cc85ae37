"""Potential construction for structured-reward games and sampled MPG checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from mpgmerge.tabular.game import (DirectPolicy, StructureError, TabularGame,
                                   random_policy, total_reward)

SYMMETRY_TOL = 1e-12
CONSISTENCY_TOL = 1e-12


@dataclass
class StatePotential:
    """Potential ``phi(s, a1..aN)`` stored with the same layout as one reward row."""

    tensor: np.ndarray

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=float)
        if not np.all(np.isfinite(self.tensor)):
            raise StructureError("potential must be finite")


def _require_factored(game: TabularGame):
    if game.local_state_counts is None:
        raise StructureError("game declares no per-agent state factorization")
    return game.local_state_counts, game.action_counts


def expand_self(r_self: np.ndarray, i: int, counts: Sequence[int], acts: Sequence[int]) -> np.ndarray:
    """Lift ``r_i^self[s_i, a_i]`` to a global ``(S, A1..AN)`` tensor."""
    n = len(counts)
    shape = [1] * (2 * n)
    shape[i], shape[n + i] = r_self.shape
    full = np.broadcast_to(np.asarray(r_self, float).reshape(shape), tuple(counts) + tuple(acts))
    return full.reshape((int(np.prod(counts)),) + tuple(acts))


def expand_pair(r_ij: np.ndarray, i: int, j: int, counts: Sequence[int], acts: Sequence[int]) -> np.ndarray:
    """Lift ``r_ij[s_i, s_j, a_i, a_j]`` to a global ``(S, A1..AN)`` tensor."""
    n = len(counts)
    r_ij = np.asarray(r_ij, float)
    if i > j:
        i, j, r_ij = j, i, r_ij.transpose(1, 0, 3, 2)
    shape = [1] * (2 * n)
    shape[i], shape[j], shape[n + i], shape[n + j] = r_ij.shape
    full = np.broadcast_to(r_ij.reshape(shape), tuple(counts) + tuple(acts))
    return full.reshape((int(np.prod(counts)),) + tuple(acts))


def _check_pair_symmetry(pair_rewards: Mapping, n: int):
    for (i, j), r in pair_rewards.items():
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise StructureError(f"invalid pair index {(i, j)}")
        if (j, i) in pair_rewards:
            mirror = np.asarray(pair_rewards[(j, i)]).transpose(1, 0, 3, 2)
            if np.max(np.abs(np.asarray(r) - mirror)) > SYMMETRY_TOL:
                raise StructureError(f"pair rewards ({i},{j}) and ({j},{i}) are not symmetric")


def _canonical_pairs(pair_rewards: Mapping) -> dict:
    """One tensor per unordered pair, oriented so the key is ``(i, j)`` with ``j < i``."""
    out = {}
    for (i, j), r in pair_rewards.items():
        key = (max(i, j), min(i, j))
        if key in out:
            continue
        r = np.asarray(r, float)
        out[key] = r if i > j else r.transpose(1, 0, 3, 2)
    return out


def _check_game_consistency(game: TabularGame, expected: np.ndarray, what: str):
    dev = np.max(np.abs(game.rewards - expected))
    if dev > CONSISTENCY_TOL * max(1.0, np.max(np.abs(expected))):
        raise StructureError(f"game rewards are not of {what} form (max deviation {dev:.3e})")


def self_reward_tensors(game: TabularGame, self_rewards: Sequence[np.ndarray]) -> np.ndarray:
    counts, acts = _require_factored(game)
    return np.stack([expand_self(r, i, counts, acts) for i, r in enumerate(self_rewards)])


def pair_reward_tensors(game: TabularGame, pair_rewards: Mapping, betas=None) -> np.ndarray:
    """Per-agent rewards ``r_i = sum_{j != i} beta_ij r_ij`` as ``(N, S, A1..AN)``."""
    counts, acts = _require_factored(game)
    out = np.zeros(game.rewards.shape)
    for (i, j), r in _canonical_pairs(pair_rewards).items():
        b = 1.0 if betas is None else betas[i][j]
        lifted = b * expand_pair(r, i, j, counts, acts)
        out[i] += lifted
        out[j] += lifted
    return out


def extract_self_rewards(game: TabularGame) -> list:
    """Recover ``r_i^self[s_i, a_i]`` from a game whose rewards have that form."""
    counts, acts = _require_factored(game)
    n = game.n_agents
    out = []
    for i in range(n):
        full = game.rewards[i].reshape(tuple(counts) + tuple(acts))
        index = [0] * (2 * n)
        index[i] = slice(None)
        index[n + i] = slice(None)
        out.append(np.array(full[tuple(index)]))
    _check_game_consistency(game, self_reward_tensors(game, out), "self-reward")
    return out


def build_self_potential(game: TabularGame, self_rewards: Optional[Sequence[np.ndarray]] = None) -> StatePotential:
    """``phi = sum_i r_i^self(s_i, a_i)``; rewards are extracted when not given."""
    if self_rewards is None:
        self_rewards = extract_self_rewards(game)
    lifted = self_reward_tensors(game, self_rewards)
    _check_game_consistency(game, lifted, "self-reward")
    return StatePotential(lifted.sum(axis=0))


def build_pairwise_potential(game: TabularGame, pair_rewards: Mapping) -> StatePotential:
    """``phi = sum_i sum_{j<i} r_ij`` for symmetric pair rewards.

    ``pair_rewards`` maps ``(i, j)`` to ``r_ij[s_i, s_j, a_i, a_j]``; one
    orientation per pair is enough, both are checked for symmetry when given.
    """
    _require_factored(game)
    _check_pair_symmetry(pair_rewards, game.n_agents)
    _check_game_consistency(game, pair_reward_tensors(game, pair_rewards), "pairwise")
    counts, acts = game.local_state_counts, game.action_counts
    phi = np.zeros(game.rewards.shape[1:])
    for (i, j), r in _canonical_pairs(pair_rewards).items():
        phi += expand_pair(r, i, j, counts, acts)
    return StatePotential(phi)


def build_mixed_potential(game: TabularGame, self_rewards: Sequence[np.ndarray], pair_rewards: Mapping,
                          alpha: float, betas) -> StatePotential:
    """``phi = alpha sum_i r_i^self + sum_i sum_{j<i} beta_ij r_ij``.

    ``alpha`` is shared by all agents and ``betas`` must be symmetric.
    """
    _require_factored(game)
    n = game.n_agents
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 0:
        if np.ptp(alpha) > 0:
            raise StructureError("per-agent alphas are not supported; fold them into r_i^self")
        alpha = alpha.reshape(-1)[0]
    alpha = float(alpha)
    betas = np.asarray(betas, dtype=float)
    if betas.shape != (n, n):
        raise StructureError("betas must be an N x N matrix")
    if np.max(np.abs(betas - betas.T)) > SYMMETRY_TOL:
        raise StructureError("betas must be symmetric")
    _check_pair_symmetry(pair_rewards, n)
    expected = alpha * self_reward_tensors(game, self_rewards) + pair_reward_tensors(game, pair_rewards, betas)
    _check_game_consistency(game, expected, "mixed self/pairwise")
    counts, acts = game.local_state_counts, game.action_counts
    phi = alpha * self_reward_tensors(game, self_rewards).sum(axis=0)
    for (i, j), r in _canonical_pairs(pair_rewards).items():
        phi = phi + betas[i, j] * expand_pair(r, i, j, counts, acts)
    return StatePotential(phi)


@dataclass
class MpgReport:
    is_mpg_on_samples: bool
    max_violation: float
    samples: int
    tol: float

    def to_dict(self) -> dict:
        return {"is_mpg_on_samples": self.is_mpg_on_samples, "max_violation": self.max_violation,
                "samples": self.samples, "tol": self.tol}


def unilateral_violation(game: TabularGame, phi: StatePotential, pi: DirectPolicy,
                         i: int, table: np.ndarray) -> float:
    """``|(J_i' - J_i) - (Phi' - Phi)|`` for agent ``i`` switching to ``table``."""
    stacked = np.concatenate([game.rewards, phi.tensor[None]])
    dev = pi.replace(i, table)
    before = total_reward(game, pi, stacked)
    after = total_reward(game, dev, stacked)
    return abs((after[i] - before[i]) - (after[-1] - before[-1]))


def verify_mpg(game: TabularGame, phi: StatePotential, sample_deviations: int = 200,
               tol: float = 1e-8, seed: int = 0) -> MpgReport:
    """Check the unilateral-deviation identity on random policy profiles.

    Every sample draws a fresh profile, an agent, and a replacement table for
    that agent, then compares the change in the agent's total reward with the
    change in total potential.  Both sides are exact, so sampling limits
    coverage only.
    """
    if phi.tensor.shape != game.rewards.shape[1:]:
        raise StructureError("potential must be shaped like one reward row")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(sample_deviations):
        pi = random_policy(game, rng)
        i = k % game.n_agents
        table = random_policy(game, rng).tables[i]
        worst = max(worst, unilateral_violation(game, phi, pi, i, table))
    return MpgReport(bool(worst < tol), float(worst), sample_deviations, tol)
