"""Random and hand-built tabular games used by the tests and the ``verify`` command.

Rewards are drawn from ``U[-1, 1]`` and transition rows from ``Dirichlet(1)``.
Structured games (self, pairwise, mixed) use per-agent kernels, a product
initial distribution with positive entries and own-state policies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from mpgmerge.tabular.game import TabularGame, factored_transition
from mpgmerge.tabular.potentials import (StatePotential, build_mixed_potential,
                                         build_pairwise_potential,
                                         build_self_potential,
                                         pair_reward_tensors,
                                         self_reward_tensors)


@dataclass
class StructuredGame:
    game: TabularGame
    phi: StatePotential
    kind: str
    self_rewards: list = field(default_factory=list)
    pair_rewards: dict = field(default_factory=dict)
    alpha: float = 0.0
    betas: Optional[np.ndarray] = None


def _product_rho(rng, counts):
    rho = np.ones(1)
    for k in counts:
        rho = np.outer(rho, rng.dirichlet(np.ones(k)) * 0.8 + 0.2 / k).ravel()
    return rho / rho.sum()


def _local_kernels(rng, counts, acts):
    return [rng.dirichlet(np.ones(k), size=(k, a)) for k, a in zip(counts, acts)]


def _skeleton(rng, counts, acts, gamma):
    P = factored_transition(_local_kernels(rng, counts, acts))
    rho = _product_rho(rng, counts)
    n = len(counts)
    zeros = np.zeros((n,) + P.shape[:-1])
    return TabularGame(P, zeros, gamma, rho, local_state_counts=tuple(counts), policy_class="local")


def _random_pairs(rng, counts, acts):
    pairs = {}
    n = len(counts)
    for i in range(n):
        for j in range(i):
            pairs[(i, j)] = rng.uniform(-1, 1, (counts[i], counts[j], acts[i], acts[j]))
    return pairs


def random_shape(rng, max_states: int = 4, max_actions: int = 3, agents=(2, 3)):
    """Draw agent count, local state counts (product at most ``max_states``) and action counts."""
    n = int(rng.choice(agents))
    while True:
        counts = tuple(int(rng.integers(1, max_states + 1)) for _ in range(n))
        if int(np.prod(counts)) <= max_states:
            break
    acts = tuple(int(rng.integers(2, max_actions + 1)) for _ in range(n))
    return counts, acts


def self_reward_game(rng, counts, acts, gamma: float = 0.9) -> StructuredGame:
    base = _skeleton(rng, counts, acts, gamma)
    selfs = [rng.uniform(-1, 1, (k, a)) for k, a in zip(counts, acts)]
    game = base.with_rewards(self_reward_tensors(base, selfs))
    return StructuredGame(game, build_self_potential(game, selfs), "theorem3", self_rewards=selfs)


def pairwise_reward_game(rng, counts, acts, gamma: float = 0.9) -> StructuredGame:
    base = _skeleton(rng, counts, acts, gamma)
    pairs = _random_pairs(rng, counts, acts)
    game = base.with_rewards(pair_reward_tensors(base, pairs))
    return StructuredGame(game, build_pairwise_potential(game, pairs), "theorem4", pair_rewards=pairs)


def mixed_reward_game(rng, counts, acts, gamma: float = 0.9) -> StructuredGame:
    base = _skeleton(rng, counts, acts, gamma)
    n = len(counts)
    selfs = [rng.uniform(-1, 1, (k, a)) for k, a in zip(counts, acts)]
    pairs = _random_pairs(rng, counts, acts)
    alpha = float(rng.uniform(0.5, 2.0))
    B = rng.uniform(0.5, 2.0, (n, n))
    betas = np.triu(B, 1) + np.triu(B, 1).T
    rewards = alpha * self_reward_tensors(base, selfs) + pair_reward_tensors(base, pairs, betas)
    game = base.with_rewards(rewards)
    phi = build_mixed_potential(game, selfs, pairs, alpha, betas)
    return StructuredGame(game, phi, "theorem5", selfs, pairs, alpha, betas)


def structured_game(kind: str, rng, counts=None, acts=None, gamma: float = 0.9) -> StructuredGame:
    if counts is None or acts is None:
        counts, acts = random_shape(rng)
    makers = {"theorem3": self_reward_game, "theorem4": pairwise_reward_game, "theorem5": mixed_reward_game}
    if kind not in makers:
        raise ValueError(f"unknown structured game kind {kind!r}")
    return makers[kind](rng, counts, acts, gamma)


def identical_interest_game(rng, state_count: int, acts: Sequence[int], gamma: float = 0.9) -> TabularGame:
    """Global-state game where every agent receives the same reward tensor."""
    acts = tuple(acts)
    P = rng.dirichlet(np.ones(state_count), size=(state_count,) + acts)
    r = rng.uniform(-1, 1, (state_count,) + acts)
    rho = rng.dirichlet(np.ones(state_count)) * 0.8 + 0.2 / state_count
    rho = rho / rho.sum()
    return TabularGame(P, np.stack([r] * len(acts)), gamma, rho)


def random_general_game(rng, state_count: int, acts: Sequence[int], gamma: float = 0.9) -> TabularGame:
    """Unstructured game with independent reward tensors and positive rho."""
    acts = tuple(acts)
    P = rng.dirichlet(np.ones(state_count), size=(state_count,) + acts)
    R = rng.uniform(-1, 1, (len(acts), state_count) + acts)
    rho = rng.dirichlet(np.ones(state_count)) * 0.8 + 0.2 / state_count
    return TabularGame(P, R, gamma, rho / rho.sum())


def coupled_counterexample(rng, gamma: float = 0.9) -> StructuredGame:
    """Two-agent zero-sum game with coupled asymmetric rewards, paired with ``phi = r_1``.

    Agent 1 receives a random joint tensor and agent 2 its negation, so a
    unilateral deviation moves the two totals in opposite directions.
    """
    counts, acts = (2, 1), (2, 2)
    base = _skeleton(rng, counts, acts, gamma)
    r1 = rng.uniform(-1, 1, base.rewards.shape[1:])
    # make the coupling strong enough to be unambiguous
    r1 = r1 + 2.0 * np.sign(r1)
    game = base.with_rewards(np.stack([r1, -r1]))
    return StructuredGame(game, StatePotential(r1), "counterexample")


def coupled_transition_game(rng, gamma: float = 0.9) -> StructuredGame:
    """Self-reward game whose agent-1 transition is driven by agent 2's action.

    The self-reward potential is attached even though the transition
    condition fails, so verification should report a violation.
    """
    counts, acts = (2, 2), (2, 2)
    K1_by_a2 = [np.array([[[0.95, 0.05], [0.9, 0.1]], [[0.9, 0.1], [0.95, 0.05]]]),
                np.array([[[0.05, 0.95], [0.1, 0.9]], [[0.1, 0.9], [0.05, 0.95]]])]
    K2 = rng.dirichlet(np.ones(2), size=(2, 2))
    full = np.zeros(counts + acts + counts)
    for s1, s2, a1, a2, t1, t2 in np.ndindex(*(counts + acts + counts)):
        full[s1, s2, a1, a2, t1, t2] = K1_by_a2[a2][s1, a1, t1] * K2[s2, a2, t2]
    P = full.reshape((4,) + acts + (4,))
    rho = _product_rho(rng, counts)
    selfs = [np.array([[1.0, 0.8], [-1.0, -0.8]]), rng.uniform(-1, 1, (2, 2))]
    base = TabularGame(P, np.zeros((2,) + P.shape[:-1]), gamma, rho,
                       local_state_counts=counts, policy_class="local")
    game = base.with_rewards(self_reward_tensors(base, selfs))
    return StructuredGame(game, build_self_potential(game, selfs), "coupled_transition", self_rewards=selfs)
