"""Projected gradient play on tabular Markov games."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mpgmerge.tabular.game import (DirectPolicy, TabularGame, joint_policy,
                                   total_reward, uniform_policy,
                                   visitation_measure)
from mpgmerge.tabular.potentials import StatePotential
from mpgmerge.tabular.projection import project_rows

DEFAULT_ETA = 0.05


def all_policy_gradients(game: TabularGame, pi: DirectPolicy,
                         rewards: Optional[np.ndarray] = None, shared_row: bool = False) -> list:
    """Exact ``dJ_i / dtheta_i`` for every agent.

    With ``shared_row`` the single reward row ``rewards`` (a potential) is
    differentiated with respect to every agent's table instead.
    """
    R = game.rewards if rewards is None else np.asarray(rewards, float)
    if shared_row:
        R = R[None]
    V = np.linalg.solve(np.eye(game.state_count) - game.gamma * _transition_matrix(game, pi),
                        _reward_vectors(game, pi, R).T).T
    Q = R + game.gamma * np.einsum("...t,nt->n...", game.transition, V)
    d, _ = visitation_measure(game, pi)
    grads = []
    for i in range(game.n_agents):
        others = joint_policy(game, pi, exclude=i)
        axes = tuple(k + 1 for k in range(game.n_agents) if k != i)
        qbar = (Q[0 if shared_row else i] * others).sum(axis=axes)
        g_global = d[:, None] * qbar / (1.0 - game.gamma)
        g = np.zeros((game.policy_rows(i), game.action_counts[i]))
        np.add.at(g, game.obs_index(i), g_global)
        grads.append(g)
    return grads


def _transition_matrix(game, pi):
    joint = joint_policy(game, pi)
    return (joint[..., None] * game.transition).reshape(game.state_count, -1, game.state_count).sum(1)


def _reward_vectors(game, pi, R):
    joint = joint_policy(game, pi)
    return (R * joint[None]).reshape(R.shape[0], game.state_count, -1).sum(-1)


def _center(g):
    return g - g.mean(axis=1, keepdims=True)


def projected_gradient_norm(pi: DirectPolicy, grads: list, eta: float = 1.0) -> float:
    """Norm of the projected-gradient mapping ``(Proj(theta + eta g) - theta) / eta``."""
    total = 0.0
    for t, g in zip(pi.tables, grads):
        total += float(np.sum((project_rows(t + eta * g) - t) ** 2))
    return float(np.sqrt(total)) / eta


@dataclass
class GradientPlayResult:
    trace: list
    potentials: list = field(default_factory=list)
    max_gradient_mismatch: float = 0.0
    converged: bool = False
    final_step_norm: float = np.inf

    @property
    def policy(self) -> DirectPolicy:
        return self.trace[-1]


def tabular_gradient_play(game: TabularGame, eta: float = DEFAULT_ETA, iterations: int = 1000,
                          phi: Optional[StatePotential] = None, init: Optional[DirectPolicy] = None,
                          backtracking: bool = False, stop_tol: float = 1e-10,
                          keep_trace: bool = True) -> GradientPlayResult:
    """Run ``theta_i <- Proj(theta_i + eta grad_i J_i)`` for every agent simultaneously.

    When ``phi`` is given the potential is tracked along the iterates and the
    largest gap between ``grad_i J_i`` and ``grad_i Phi`` is recorded.  With
    ``backtracking`` a step that lowers the potential is retried with half the
    step size (requires ``phi``).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if backtracking and phi is None:
        raise ValueError("backtracking needs a potential")
    pi = uniform_policy(game) if init is None else init.copy()
    result = GradientPlayResult(trace=[pi])
    pot = None if phi is None else float(total_reward(game, pi, phi.tensor))
    if pot is not None:
        result.potentials.append(pot)
    step = eta
    for _ in range(iterations):
        grads = all_policy_gradients(game, pi)
        if phi is not None:
            pgrads = all_policy_gradients(game, pi, phi.tensor, shared_row=True)
            # rows live on the simplex, so compare within its tangent space
            mismatch = max(float(np.max(np.abs(_center(a) - _center(b)))) for a, b in zip(grads, pgrads))
            result.max_gradient_mismatch = max(result.max_gradient_mismatch, mismatch)
        while True:
            new = DirectPolicy([project_rows(t + step * g) for t, g in zip(pi.tables, grads)])
            if not backtracking:
                break
            new_pot = float(total_reward(game, new, phi.tensor))
            if new_pot >= pot - 1e-13 or step < 1e-12:
                break
            step *= 0.5
        moved = np.sqrt(sum(float(np.sum((a - b) ** 2)) for a, b in zip(new.tables, pi.tables)))
        pi = new
        if phi is not None:
            pot = float(total_reward(game, pi, phi.tensor))
            result.potentials.append(pot)
        if keep_trace:
            result.trace.append(pi)
        else:
            result.trace[-1:] = [pi]
        result.final_step_norm = moved / step
        if moved / step < stop_tol:
            result.converged = True
            break
    if not keep_trace:
        result.trace = [result.trace[-1]]
    return result
