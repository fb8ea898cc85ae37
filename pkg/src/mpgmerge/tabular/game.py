"""Finite Markov games with direct (tabular) policy parameterization.

Joint actions are stored as trailing tensor axes, one per agent, so a game
with agents of action counts ``(A1, ..., AN)`` has

* ``transition`` of shape ``(S, A1, ..., AN, S)``
* ``rewards`` of shape ``(N, S, A1, ..., AN)``

When a game declares ``local_state_counts`` the global state index is the
C-order ravel of the per-agent local states.  Policies of such games may
condition each agent on its own local state only (``policy_class="local"``),
which is the class in which the self/pairwise reward constructions are
Markov potential games.
"""

from __future__ import annotations

import string
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ROW_TOL = 1e-12


class StructureError(ValueError):
    """A tensor or declared factorization is inconsistent."""


class AccuracyWarning(UserWarning):
    """An iterative solve stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def _letters(n: int) -> str:
    # einsum subscripts for the agent action axes; 's' and 't' stay reserved
    pool = [c for c in string.ascii_lowercase if c not in "st"]
    if n > len(pool):
        raise StructureError(f"too many agents for einsum subscripts: {n}")
    return "".join(pool[:n])


@dataclass
class TabularGame:
    transition: np.ndarray
    rewards: np.ndarray
    gamma: float
    rho: np.ndarray
    local_state_counts: Optional[tuple[int, ...]] = None
    policy_class: str = "global"
    _obs_index: list = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        n = self.rewards.shape[0]
        S = self.rho.shape[0]
        if self.transition.ndim != n + 2:
            raise StructureError("transition must have shape (S, A1..AN, S)")
        if self.transition.shape[0] != S or self.transition.shape[-1] != S:
            raise StructureError("transition state axes do not match rho")
        if self.rewards.shape[1:] != self.transition.shape[:-1]:
            raise StructureError("rewards must have shape (N, S, A1..AN)")
        if not 0.0 <= self.gamma < 1.0:
            raise StructureError(f"gamma must lie in [0, 1), got {self.gamma}")
        if np.any(self.transition < 0) or np.max(np.abs(self.transition.sum(-1) - 1.0)) > ROW_TOL:
            raise StructureError("transition rows must be distributions")
        if np.any(self.rho < 0) or abs(self.rho.sum() - 1.0) > ROW_TOL:
            raise StructureError("rho must be a distribution")
        if self.local_state_counts is not None:
            self.local_state_counts = tuple(int(k) for k in self.local_state_counts)
            if len(self.local_state_counts) != n or int(np.prod(self.local_state_counts)) != S:
                raise StructureError("local_state_counts must multiply to the state count")
        if self.policy_class not in ("global", "local"):
            raise StructureError(f"unknown policy class {self.policy_class!r}")
        if self.policy_class == "local" and self.local_state_counts is None:
            raise StructureError("local policies need a declared state factorization")
        if self.policy_class == "local":
            grid = np.indices(self.local_state_counts).reshape(n, -1)
            self._obs_index = [grid[i] for i in range(n)]
        else:
            self._obs_index = [np.arange(S) for _ in range(n)]

    @property
    def n_agents(self) -> int:
        return self.rewards.shape[0]

    @property
    def state_count(self) -> int:
        return self.rho.shape[0]

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(self.transition.shape[1:-1])

    def policy_rows(self, i: int) -> int:
        """Number of rows in agent ``i``'s policy table."""
        if self.policy_class == "local":
            return self.local_state_counts[i]
        return self.state_count

    def obs_index(self, i: int) -> np.ndarray:
        """Map from global state to the row of agent ``i``'s policy table."""
        return self._obs_index[i]

    def local_states(self) -> np.ndarray:
        """Array ``(N, S)`` of local state indices (requires a factorization)."""
        if self.local_state_counts is None:
            raise StructureError("game declares no state factorization")
        return np.indices(self.local_state_counts).reshape(self.n_agents, -1)

    def with_rewards(self, rewards: np.ndarray) -> "TabularGame":
        return TabularGame(self.transition, rewards, self.gamma, self.rho,
                           self.local_state_counts, self.policy_class)

    def with_policy_class(self, policy_class: str) -> "TabularGame":
        return TabularGame(self.transition, self.rewards, self.gamma, self.rho,
                           self.local_state_counts, policy_class)


@dataclass
class DirectPolicy:
    """Per-agent tables whose rows lie on the probability simplex."""

    tables: list

    def __post_init__(self):
        self.tables = [np.asarray(t, dtype=float) for t in self.tables]
        for t in self.tables:
            if t.ndim != 2 or np.any(t < -ROW_TOL) or np.max(np.abs(t.sum(1) - 1.0)) > 1e-10:
                raise StructureError("policy rows must lie on the simplex")

    def copy(self) -> "DirectPolicy":
        return DirectPolicy([t.copy() for t in self.tables])

    def replace(self, i: int, table: np.ndarray) -> "DirectPolicy":
        tables = list(self.tables)
        tables[i] = np.asarray(table, dtype=float)
        return DirectPolicy(tables)

    def is_deterministic(self, atol: float = 1e-9) -> bool:
        return all(np.all(np.isclose(t.max(1), 1.0, atol=atol)) for t in self.tables)


def uniform_policy(game: TabularGame) -> DirectPolicy:
    return DirectPolicy([np.full((game.policy_rows(i), a), 1.0 / a)
                         for i, a in enumerate(game.action_counts)])


def random_policy(game: TabularGame, rng: np.random.Generator) -> DirectPolicy:
    return DirectPolicy([rng.dirichlet(np.ones(a), size=game.policy_rows(i))
                         for i, a in enumerate(game.action_counts)])


def check_policy(game: TabularGame, pi: DirectPolicy) -> None:
    if len(pi.tables) != game.n_agents:
        raise StructureError("policy has the wrong number of agents")
    for i, (t, a) in enumerate(zip(pi.tables, game.action_counts)):
        if t.shape != (game.policy_rows(i), a):
            raise StructureError(f"agent {i} policy table has shape {t.shape}, "
                                 f"expected {(game.policy_rows(i), a)}")


def expanded_tables(game: TabularGame, pi: DirectPolicy) -> list:
    """Per-agent policy tables indexed by global state, shape ``(S, A_i)``."""
    check_policy(game, pi)
    return [t[game.obs_index(i)] for i, t in enumerate(pi.tables)]


def joint_policy(game: TabularGame, pi: DirectPolicy, exclude: Optional[int] = None) -> np.ndarray:
    """Product policy tensor ``(S, A1..AN)``; agent ``exclude`` contributes ones."""
    n = game.n_agents
    out = np.ones((game.state_count,) + game.action_counts)
    for i, t in enumerate(expanded_tables(game, pi)):
        if i == exclude:
            continue
        shape = [game.state_count] + [1] * n
        shape[i + 1] = t.shape[1]
        out = out * t.reshape(shape)
    return out


def _policy_matrices(game: TabularGame, pi: DirectPolicy, rewards: np.ndarray):
    n = game.n_agents
    ax = _letters(n)
    joint = joint_policy(game, pi)
    P = np.einsum(f"s{ax},s{ax}t->st", joint, game.transition)
    r = np.einsum(f"s{ax},ns{ax}->ns", joint, rewards)
    return P, r


def exact_value_functions(game: TabularGame, pi: DirectPolicy,
                          rewards: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve ``(I - gamma P_pi) V_i = r_i^pi`` for every agent; returns ``(N, S)``.

    ``rewards`` may substitute any tensor shaped like the game rewards (a
    potential, for instance); a bare ``(S, A1..AN)`` tensor is treated as a
    single row.
    """
    if rewards is None:
        rewards = game.rewards
    rewards = np.asarray(rewards, dtype=float)
    squeeze = rewards.ndim == game.rewards.ndim - 1
    if squeeze:
        rewards = rewards[None]
    P, r = _policy_matrices(game, pi, rewards)
    A = np.eye(game.state_count) - game.gamma * P
    V = np.linalg.solve(A, r.T).T
    residual = np.max(np.abs(V @ A.T - r)) if V.size else 0.0
    if residual > 1e-10 * max(1.0, np.max(np.abs(r))):
        raise ArithmeticError(f"value solve residual {residual:.3e}")
    return V[0] if squeeze else V


def total_reward(game: TabularGame, pi: DirectPolicy,
                 rewards: Optional[np.ndarray] = None) -> np.ndarray:
    """``J_i = sum_s rho(s) V_i(s)``."""
    return exact_value_functions(game, pi, rewards) @ game.rho


def total_potential(game: TabularGame, pi: DirectPolicy, phi) -> float:
    return float(total_reward(game, pi, np.asarray(getattr(phi, "tensor", phi))))


def visitation_measure(game: TabularGame, pi: DirectPolicy):
    """Discounted state visitation ``d`` and state-action measure ``mu``.

    ``d = (1 - gamma) rho^T (I - gamma P_pi)^{-1}``; ``mu(s, a) = d(s) pi(a|s)``
    with ``a`` the joint action.
    """
    P, _ = _policy_matrices(game, pi, game.rewards[:1])
    d = (1.0 - game.gamma) * np.linalg.solve((np.eye(game.state_count) - game.gamma * P).T, game.rho)
    d = d / d.sum()
    mu = joint_policy(game, pi) * d.reshape((-1,) + (1,) * game.n_agents)
    return d, mu


def q_values(game: TabularGame, pi: DirectPolicy, rewards: Optional[np.ndarray] = None) -> np.ndarray:
    """Joint-action Q tensors ``(N, S, A1..AN)``."""
    if rewards is None:
        rewards = game.rewards
    V = exact_value_functions(game, pi, rewards)
    return rewards + game.gamma * np.einsum("...t,nt->n...", game.transition, V)


def marginal_q(game: TabularGame, pi: DirectPolicy, i: int,
               rewards: Optional[np.ndarray] = None, agent_row: Optional[int] = None) -> np.ndarray:
    """``Qbar(s, a_i)``: agent-``agent_row`` Q averaged over the others' actions."""
    Q = q_values(game, pi, rewards)[i if agent_row is None else agent_row]
    others = joint_policy(game, pi, exclude=i)
    axes = tuple(k + 1 for k in range(game.n_agents) if k != i)
    return (Q * others).sum(axis=axes)


def policy_gradient(game: TabularGame, pi: DirectPolicy, i: int,
                    rewards: Optional[np.ndarray] = None, row: Optional[int] = None) -> np.ndarray:
    """Exact gradient of ``J`` (row ``row`` of ``rewards``, default ``i``) with
    respect to agent ``i``'s table.

    Uses ``dJ/dpi_i(a_i|s) = d(s) Qbar(s, a_i) / (1 - gamma)`` for the global
    class; for local policies the global-state entries sharing a local state
    are summed.
    """
    if rewards is None:
        rewards = game.rewards
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim == game.rewards.ndim - 1:
        rewards, row = rewards[None], 0
    row = i if row is None else row
    d, _ = visitation_measure(game, pi)
    qbar = marginal_q(game, pi, i, rewards, agent_row=row)
    g_global = d[:, None] * qbar / (1.0 - game.gamma)
    out = np.zeros((game.policy_rows(i), game.action_counts[i]))
    np.add.at(out, game.obs_index(i), g_global)
    return out


def best_response_mdp(game: TabularGame, pi: DirectPolicy, i: int):
    """Agent ``i``'s induced MDP with the others frozen: ``(P_i, r_i)``.

    ``P_i`` has shape ``(S, A_i, S)`` and ``r_i`` has shape ``(S, A_i)``.
    """
    others = joint_policy(game, pi, exclude=i)
    axes = tuple(k + 1 for k in range(game.n_agents) if k != i)
    r = (game.rewards[i] * others).sum(axis=axes)
    P = (game.transition * others[..., None]).sum(axis=axes)
    return P, r


def value_iteration(P: np.ndarray, r: np.ndarray, gamma: float,
                    tol: float = 1e-12, max_iter: int = 100_000):
    """Optimal values of a finite MDP ``(P[s, a, s'], r[s, a])``.

    Returns ``(V, greedy_actions, residual)``; warns with
    :class:`AccuracyWarning` if the Bellman residual stays above ``tol``.
    """
    V = np.zeros(r.shape[0])
    residual = np.inf
    for _ in range(max_iter):
        Q = r + gamma * P @ V
        V_new = Q.max(axis=1)
        residual = np.max(np.abs(V_new - V))
        V = V_new
        if residual < tol * (1.0 - gamma) or residual == 0.0:
            break
    else:
        warnings.warn(AccuracyWarning(f"value iteration residual {residual:.3e}", residual))
    # one exact policy-evaluation polish step on the greedy policy
    greedy = (r + gamma * P @ V).argmax(axis=1)
    idx = np.arange(r.shape[0])
    V_pol = np.linalg.solve(np.eye(r.shape[0]) - gamma * P[idx, greedy], r[idx, greedy])
    return np.maximum(V, V_pol), greedy, residual


def _local_best_response_value(game: TabularGame, pi: DirectPolicy, i: int,
                               rng: np.random.Generator, restarts: int, iters: int) -> float:
    # Best response restricted to own-state policies has no closed form; take the
    # best of every deterministic local policy and projected-gradient restarts.
    from mpgmerge.tabular.projection import project_rows

    rows, A = game.policy_rows(i), game.action_counts[i]
    J = lambda table: total_reward(game, pi.replace(i, table))[i]
    best = J(pi.tables[i])
    if A ** rows <= 4096:
        for choice in np.ndindex(*([A] * rows)):
            best = max(best, J(np.eye(A)[list(choice)]))
    starts = [pi.tables[i]] + [rng.dirichlet(np.ones(A), size=rows) for _ in range(restarts)]
    for table in starts:
        table = table.copy()
        eta = 1.0 / (1.0 + np.max(np.abs(game.rewards[i])))
        for _ in range(iters):
            g = policy_gradient(game, pi.replace(i, table), i)
            table = project_rows(table + eta * g)
        best = max(best, J(table))
    return best


def best_response_value(game: TabularGame, pi: DirectPolicy, i: int,
                        rng: Optional[np.random.Generator] = None,
                        restarts: int = 4, iters: int = 200) -> float:
    """Value agent ``i`` attains by best-responding within its policy class."""
    if game.policy_class == "global":
        P, r = best_response_mdp(game, pi, i)
        V, _, _ = value_iteration(P, r, game.gamma)
        return float(game.rho @ V)
    rng = np.random.default_rng(0) if rng is None else rng
    return _local_best_response_value(game, pi, i, rng, restarts, iters)


def exploitability(game: TabularGame, pi: DirectPolicy, **kwargs) -> float:
    """Largest unilateral gain ``max_i (BR_i - J_i)``, clipped at zero."""
    J = total_reward(game, pi)
    gaps = [best_response_value(game, pi, i, **kwargs) - J[i] for i in range(game.n_agents)]
    return max(0.0, float(max(gaps)))


def verify_transition_independence(game: TabularGame, tol: float = 1e-12) -> bool:
    """True iff every agent's local transition ignores the other agents' actions."""
    if game.local_state_counts is None:
        raise StructureError("game declares no state factorization")
    n = game.n_agents
    counts = game.local_state_counts
    acts = game.action_counts
    full = game.transition.reshape(counts + acts + counts)
    for i in range(n):
        # marginal over the other agents' next local states
        next_axes = tuple(2 * n + k for k in range(n) if k != i)
        marg = full.sum(axis=next_axes)  # counts + acts + (counts_i,)
        other_action_axes = tuple(n + k for k in range(n) if k != i)
        spread = marg.max(axis=other_action_axes) - marg.min(axis=other_action_axes)
        if np.max(spread) >= tol:
            return False
    return True


def factored_transition(local_kernels: Sequence[np.ndarray]) -> np.ndarray:
    """Global transition from per-agent kernels ``K_i[s_i, a_i, s_i']``."""
    n = len(local_kernels)
    counts = tuple(k.shape[0] for k in local_kernels)
    acts = tuple(k.shape[1] for k in local_kernels)
    out = np.ones(counts + acts + counts)
    for i, K in enumerate(local_kernels):
        shape = [1] * (3 * n)
        shape[i], shape[n + i], shape[2 * n + i] = K.shape
        out = out * K.reshape(shape)
    S = int(np.prod(counts))
    return out.reshape((S,) + acts + (S,))
