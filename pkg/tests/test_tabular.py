import json

import numpy as np
import pytest
from scipy.optimize import minimize

from mpgmerge.tabular import (DirectPolicy, StatePotential, StructureError, TabularGame,
                              build_mixed_potential, build_pairwise_potential,
                              build_self_potential, exact_value_functions, exploitability,
                              policy_gradient, random_policy, simplex_projection,
                              tabular_gradient_play, total_reward, uniform_policy,
                              verify_mpg, verify_transition_independence,
                              visitation_measure)
from mpgmerge.tabular.game import factored_transition
from mpgmerge.tabular.generators import (coupled_counterexample, coupled_transition_game,
                                         identical_interest_game, random_general_game,
                                         structured_game)
from mpgmerge.tabular.io import GameFormatError, game_to_dict, load_game, save_game


def one_state_game(r1, r2, gamma=0.5):
    r1 = np.asarray(r1, float)
    P = np.ones(r1.shape + (1,))[None]
    return TabularGame(P, np.stack([r1, np.asarray(r2, float)])[:, None], gamma, np.ones(1))


def qp_projection(v):
    """Independent oracle: constrained least squares with SLSQP."""
    n = len(v)
    res = minimize(lambda p: np.sum((p - v) ** 2), np.full(n, 1.0 / n), method="SLSQP",
                   bounds=[(0, None)] * n, constraints={"type": "eq", "fun": lambda p: p.sum() - 1},
                   options={"ftol": 1e-14})
    return res.x


# -- simplex projection ------------------------------------------------------

def test_projection_identity_on_simplex():
    p = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(simplex_projection(p), p, atol=1e-15)


# [-1, 0] lies closer to the vertex (0, 1) (squared distance 2) than to (1, 0) (4)
@pytest.mark.parametrize("v, expected", [([1.2, 0.5], [0.85, 0.15]), ([-1.0, 0.0], [0.0, 1.0])])
def test_projection_frozen_values(v, expected):
    np.testing.assert_allclose(qp_projection(np.array(v)), expected, atol=1e-6)  # oracle agrees
    np.testing.assert_allclose(simplex_projection(v), expected, atol=1e-12)


def test_projection_matches_qp_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.normal(size=rng.integers(2, 6)) * 2
        np.testing.assert_allclose(simplex_projection(v), qp_projection(v), atol=1e-6)


def test_projection_rejects_bad_input():
    with pytest.raises(ValueError):
        simplex_projection([])
    with pytest.raises(ValueError):
        simplex_projection([np.nan, 1.0])


# -- values and measures -----------------------------------------------------

def test_value_single_state_geometric():
    g = one_state_game([[2.0, 2.0], [2.0, 2.0]], [[2.0, 2.0], [2.0, 2.0]], gamma=0.9)
    V = exact_value_functions(g, random_policy(g, np.random.default_rng(0)))
    np.testing.assert_allclose(V[:, 0], 20.0, rtol=1e-12)


def test_value_gamma_zero_is_expected_reward():
    rng = np.random.default_rng(1)
    g = random_general_game(rng, 3, (2, 2), gamma=0.0)
    pi = random_policy(g, rng)
    V = exact_value_functions(g, pi)
    expected = np.einsum("nsab,sa,sb->ns", g.rewards, pi.tables[0], pi.tables[1])
    np.testing.assert_allclose(V, expected, atol=1e-14)


def test_value_matches_monte_carlo():
    rng = np.random.default_rng(2)
    g = random_general_game(rng, 3, (2, 2), gamma=0.8)
    pi = random_policy(g, rng)
    V = exact_value_functions(g, pi)
    chains, horizon = 20_000, 80  # 1.6e6 simulated steps; 0.8**80 ~ 2e-8
    mc = np.random.default_rng(5)
    s = np.zeros(chains, dtype=int)  # start every chain in state 0
    ret = np.zeros((2, chains))
    cdf0, cdf1 = np.cumsum(pi.tables[0], 1), np.cumsum(pi.tables[1], 1)
    Pc = np.cumsum(g.transition, -1)
    for t in range(horizon):
        a = (mc.random(chains)[:, None] > cdf0[s]).sum(1)
        b = (mc.random(chains)[:, None] > cdf1[s]).sum(1)
        ret += g.gamma ** t * g.rewards[:, s, a, b]
        s = np.minimum((mc.random(chains)[:, None] > Pc[s, a, b]).sum(1), 2)
    se = ret.std(axis=1) / np.sqrt(chains)
    assert np.all(np.abs(ret.mean(axis=1) - V[:, 0]) < 3 * se + 1e-6)


def test_total_reward_visitation_identity():
    rng = np.random.default_rng(4)
    g = random_general_game(rng, 4, (2, 3), gamma=0.9)
    pi = random_policy(g, rng)
    d, mu = visitation_measure(g, pi)
    J = total_reward(g, pi)
    np.testing.assert_allclose(J, [(mu * g.rewards[i]).sum() / (1 - g.gamma) for i in range(2)], rtol=1e-10)
    assert np.all(d > 0)


def test_total_reward_point_mass_rho():
    rng = np.random.default_rng(6)
    g = random_general_game(rng, 3, (2, 2))
    g = TabularGame(g.transition, g.rewards, g.gamma, np.array([0.0, 1.0, 0.0]))
    pi = random_policy(g, rng)
    np.testing.assert_allclose(total_reward(g, pi), exact_value_functions(g, pi)[:, 1])


def test_visitation_gamma_zero_is_rho():
    rng = np.random.default_rng(7)
    g = random_general_game(rng, 3, (2, 2), gamma=0.0)
    d, _ = visitation_measure(g, random_policy(g, rng))
    np.testing.assert_allclose(d, g.rho, atol=1e-15)


def test_policy_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    for sg in (structured_game("theorem5", rng), None):
        g = sg.game if sg else random_general_game(rng, 3, (2, 3))
        pi = random_policy(g, rng)
        for i in range(g.n_agents):
            grad = policy_gradient(g, pi, i)
            d = rng.normal(size=grad.shape)
            d -= d.mean(axis=1, keepdims=True)  # stay on the simplex
            h = 1e-6 / np.abs(d).max()
            Jp = total_reward(g, pi.replace(i, pi.tables[i] + h * d))[i]
            Jm = total_reward(g, pi.replace(i, pi.tables[i] - h * d))[i]
            fd = (Jp - Jm) / (2 * h)
            assert abs(fd - np.sum(grad * d)) < 1e-6 * max(1.0, abs(fd))


# -- potentials --------------------------------------------------------------

def test_self_potential_single_agent_equals_reward():
    rng = np.random.default_rng(9)
    K = rng.dirichlet(np.ones(2), size=(2, 3))
    r = rng.uniform(-1, 1, (2, 3))
    g = TabularGame(factored_transition([K]), r[None], 0.9, np.array([0.5, 0.5]),
                    local_state_counts=(2,), policy_class="local")
    np.testing.assert_allclose(build_self_potential(g, [r]).tensor, r)


def test_self_potential_constant_rewards():
    rng = np.random.default_rng(10)
    sg = structured_game("theorem3", rng, counts=(2, 2), acts=(2, 2))
    selfs = [np.full((2, 2), 1.5), np.full((2, 2), -0.5)]
    from mpgmerge.tabular.potentials import self_reward_tensors
    g = sg.game.with_rewards(self_reward_tensors(sg.game, selfs))
    np.testing.assert_allclose(build_self_potential(g, selfs).tensor, 1.0)


def test_pairwise_potential_two_agents_and_zero():
    rng = np.random.default_rng(11)
    sg = structured_game("theorem4", rng, counts=(2, 2), acts=(2, 2))
    (key, r), = sg.pair_rewards.items()
    from mpgmerge.tabular.potentials import expand_pair
    np.testing.assert_allclose(sg.phi.tensor, expand_pair(r, *key, (2, 2), (2, 2)))
    zero = sg.game.with_rewards(np.zeros_like(sg.game.rewards))
    assert np.all(build_pairwise_potential(zero, {key: np.zeros_like(r)}).tensor == 0)


def test_mixed_potential_reductions():
    from mpgmerge.tabular.potentials import pair_reward_tensors, self_reward_tensors
    rng = np.random.default_rng(12)
    sg = structured_game("theorem5", rng, counts=(2, 2, 1), acts=(2, 2, 2))
    n = sg.game.n_agents
    # betas zero: only the (shared-alpha) self part survives
    g_self = sg.game.with_rewards(self_reward_tensors(sg.game, sg.self_rewards))
    phi = build_mixed_potential(g_self, sg.self_rewards, sg.pair_rewards, 1.0, np.zeros((n, n)))
    np.testing.assert_allclose(phi.tensor, build_self_potential(g_self, sg.self_rewards).tensor, atol=1e-12)
    # alpha zero, unit betas: the pairwise potential
    ones = np.ones((n, n))
    g_pair = sg.game.with_rewards(pair_reward_tensors(sg.game, sg.pair_rewards, ones))
    phi = build_mixed_potential(g_pair, sg.self_rewards, sg.pair_rewards, 0.0, ones)
    np.testing.assert_allclose(phi.tensor, build_pairwise_potential(g_pair, sg.pair_rewards).tensor, atol=1e-12)
    with pytest.raises(StructureError):
        build_mixed_potential(sg.game, sg.self_rewards, sg.pair_rewards, sg.alpha, np.triu(np.ones((n, n))))


@pytest.mark.parametrize("kind", ["theorem3", "theorem4", "theorem5"])
def test_structured_games_are_potential_games(kind):
    rng = np.random.default_rng(13)
    for _ in range(3):
        sg = structured_game(kind, rng)
        assert verify_transition_independence(sg.game)
        rep = verify_mpg(sg.game, sg.phi, sample_deviations=60, tol=1e-8)
        assert rep.is_mpg_on_samples, rep.to_dict()


def test_identical_interest_is_potential_game():
    g = identical_interest_game(np.random.default_rng(14), 3, (2, 2))
    rep = verify_mpg(g, StatePotential(g.rewards[0]), sample_deviations=50, tol=1e-10)
    assert rep.is_mpg_on_samples and rep.max_violation < 1e-10


def test_counterexample_violates():
    sg = coupled_counterexample(np.random.default_rng(15))
    assert verify_mpg(sg.game, sg.phi, sample_deviations=50).max_violation > 1e-2


def test_transition_independence_gate():
    sg = coupled_transition_game(np.random.default_rng(16))
    assert not verify_transition_independence(sg.game)
    assert verify_mpg(sg.game, sg.phi, sample_deviations=100).max_violation > 1e-3


def test_potential_shape_is_checked():
    sg = structured_game("theorem3", np.random.default_rng(17))
    with pytest.raises(StructureError):
        verify_mpg(sg.game, StatePotential(np.zeros(3)))


def test_asymmetric_pair_rewards_rejected():
    rng = np.random.default_rng(18)
    sg = structured_game("theorem4", rng, counts=(2, 2), acts=(2, 2))
    (key, r), = sg.pair_rewards.items()
    bad = {key: r, key[::-1]: r + 1.0}
    with pytest.raises(StructureError):
        build_pairwise_potential(sg.game, bad)


# -- exploitability and gradient play -----------------------------------------

def test_exploitability_single_agent_optimum():
    rng = np.random.default_rng(19)
    P = rng.dirichlet(np.ones(3), size=(3, 2))
    r = rng.uniform(-1, 1, (3, 2))
    g = TabularGame(P, r[None], 0.9, np.full(3, 1 / 3))
    from mpgmerge.tabular import value_iteration
    _, greedy, _ = value_iteration(P, r, 0.9)
    pi = DirectPolicy([np.eye(2)[greedy]])
    assert abs(exploitability(g, pi)) < 1e-9


def test_exploitability_matching_pennies_uniform():
    r1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    g = one_state_game(r1, -r1)
    assert abs(exploitability(g, uniform_policy(g))) < 1e-9
    pure = DirectPolicy([np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]])])
    assert exploitability(g, pure) > 1.0


def test_exploitability_nonnegative():
    rng = np.random.default_rng(20)
    g = random_general_game(rng, 3, (2, 2))
    assert exploitability(g, random_policy(g, rng)) >= 0.0


def test_gradient_play_fixed_at_strict_pure_ne():
    r = np.array([[3.0, 0.0], [0.0, 1.0]])
    g = one_state_game(r, r)
    ne = DirectPolicy([np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]])])
    res = tabular_gradient_play(g, eta=0.05, iterations=20, init=ne)
    for t in res.policy.tables:
        np.testing.assert_array_equal(t, [[1.0, 0.0]])


def test_gradient_play_identical_interest_finds_enumerated_maximum():
    rng = np.random.default_rng(21)
    g = identical_interest_game(rng, 2, (2, 2))
    phi = StatePotential(g.rewards[0])
    best = -np.inf
    for choice in np.ndindex(2, 2, 2, 2):
        pi = DirectPolicy([np.eye(2)[list(choice[:2])], np.eye(2)[list(choice[2:])]])
        best = max(best, total_reward(g, pi)[0])
    res = tabular_gradient_play(g, eta=0.5, iterations=5000, phi=phi, keep_trace=False)
    assert res.policy.is_deterministic(atol=1e-6)
    assert total_reward(g, res.policy)[0] == pytest.approx(best, abs=1e-8)


def test_gradient_play_theorem5_backtracking_monotone():
    rng = np.random.default_rng(22)
    sg = structured_game("theorem5", rng)
    res = tabular_gradient_play(sg.game, eta=0.05, iterations=3000, phi=sg.phi, backtracking=True,
                                keep_trace=False)
    assert np.all(np.diff(res.potentials) >= -1e-10)
    assert exploitability(sg.game, res.policy) < 1e-3
    assert res.max_gradient_mismatch < 1e-8


def test_gradient_play_default_step_monotone_without_backtracking():
    rng = np.random.default_rng(23)
    for _ in range(10):
        sg = structured_game("theorem5", rng)
        res = tabular_gradient_play(sg.game, iterations=500, phi=sg.phi, keep_trace=False)
        assert np.all(np.diff(res.potentials) >= -1e-10)


def test_gradient_play_needs_positive_step():
    g = one_state_game(np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        tabular_gradient_play(g, eta=0.0)


# -- game validation and I/O -------------------------------------------------

def test_game_rejects_bad_rows_and_gamma():
    P = np.ones((1, 2, 1))
    with pytest.raises(StructureError):
        TabularGame(P * 0.5, np.zeros((1, 1, 2)), 0.9, np.ones(1))
    with pytest.raises(StructureError):
        TabularGame(P, np.zeros((1, 1, 2)), 1.0, np.ones(1))


def test_io_roundtrip(tmp_path):
    sg = structured_game("theorem5", np.random.default_rng(23))
    path = tmp_path / "g.json"
    save_game(path, sg.game, sg.phi)
    game, phi = load_game(path)
    np.testing.assert_array_equal(game.transition, sg.game.transition)
    np.testing.assert_array_equal(phi.tensor, sg.phi.tensor)
    assert game.policy_class == "local"


def test_io_rejects_malformed(tmp_path):
    sg = structured_game("theorem3", np.random.default_rng(24))
    data = game_to_dict(sg.game, sg.phi)
    data["rewards"] = data["rewards"][:-1]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    with pytest.raises(GameFormatError):
        load_game(path)
