import math

import numpy as np
import pytest

from mpgmerge.config import MergeRewardSpec
from mpgmerge.dynamics import VehicleAction, VehicleGeometry, VehicleState, step_vehicle
from mpgmerge.rewards import (RAMP, TARGET, agent_reward, comfort_reward, conflict_time_gap_reward,
                              potential_function, same_lane_ttc_reward, speed_tracking_reward)
from mpgmerge.tabular import StatePotential, TabularGame, verify_mpg, verify_transition_independence
from mpgmerge.tabular.game import factored_transition

SPEC = MergeRewardSpec(eps=1e-3, v_c=1.0)


def test_self_terms():
    assert speed_tracking_reward(15.0, 15.0) == 0.0
    assert speed_tracking_reward(10.0, 15.0) == -25.0
    assert comfort_reward(0.0) == 0.0
    assert comfort_reward(2.0) == -4.0
    assert comfort_reward(-1.7) == comfort_reward(1.7)


def test_ttc_term_values():
    assert same_lane_ttc_reward(10.0, 5.0, 10.0, 5.0, SPEC) == pytest.approx(-1.0 / SPEC.eps)
    assert same_lane_ttc_reward(0.0, 20.0, 30.0, 10.0, SPEC) == pytest.approx(-1.0 / (3.0 + SPEC.eps), rel=1e-15)
    assert same_lane_ttc_reward(30.0, 10.0, 0.0, 20.0, SPEC) == same_lane_ttc_reward(0.0, 20.0, 30.0, 10.0, SPEC)


def test_ttc_term_continuous_at_threshold():
    at = same_lane_ttc_reward(0.0, 11.0, 20.0, 10.0, SPEC)  # |dv| = v_c
    above = same_lane_ttc_reward(0.0, 11.0 + 1e-9, 20.0, 10.0, SPEC)
    assert at == pytest.approx(above, abs=1e-9)


def test_conflict_term_values():
    spec = MergeRewardSpec(eps=1e-3, x_c=180.0)
    v = 10.0 - spec.eps  # makes T = |x - x_c| / 10 exactly representable
    x_i, x_j = 180.0 - 100.0, 180.0 - 50.0
    expected = -1.0 / (math.sqrt(50.0) * 25.0 + spec.eps)
    assert conflict_time_gap_reward(x_i, v, x_j, v, spec) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(-0.0056569, abs=1e-7)
    assert conflict_time_gap_reward(100.0, 10.0, 260.0, 10.0, spec) == -1.0 / spec.eps  # mirror images
    assert conflict_time_gap_reward(x_j, 7.0, x_i, 9.0, spec) == conflict_time_gap_reward(x_i, 9.0, x_j, 7.0, spec)


def test_agent_reward_cases():
    zero = MergeRewardSpec(w11=0, w12=0, w21=0, w22=0)
    x, v, u = [0.0, 30.0, 90.0], [10.0, 12.0, 14.0], [1.0, -1.0, 0.5]
    lanes = [RAMP, TARGET, TARGET]
    assert agent_reward(x, v, u, 0, zero, lanes) == 0.0
    assert potential_function(x, v, u, zero, lanes) == 0.0
    assert agent_reward([5.0], [10.0], [2.0], 0, SPEC, [TARGET]) == pytest.approx(-25.0 - 0.5 * 4.0)


def test_agent_reward_two_vehicles_same_lane_by_hand():
    spec = MergeRewardSpec(eps=1e-3)
    x, v, u, lanes = [0.0, 30.0], [20.0, 10.0], [1.0, 0.0], [TARGET, TARGET]
    by_hand = -1.0 * (20.0 - 15.0) ** 2 - 0.5 * 1.0 + 20.0 * (-1.0 / (3.0 + 1e-3))
    assert agent_reward(x, v, u, 0, spec, lanes) == pytest.approx(by_hand, rel=1e-14)


def test_potential_additive_when_decoupled():
    spec = MergeRewardSpec(w21=0, w22=0)
    n = 4
    phi = potential_function([0.0, 10.0, 20.0, 30.0], [12.0] * n, [0.5] * n, spec, [TARGET] * n)
    assert phi == pytest.approx(n * agent_reward([0.0], [12.0], [0.5], 0, spec, [TARGET]))


def test_rewards_nonpositive_and_finite():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = 3
        x, v, u = rng.uniform(0, 300, n), rng.uniform(0, 30, n), rng.uniform(-9.81, 9.81, n)
        lanes = rng.integers(0, 2, n)
        phi = potential_function(x, v, u, SPEC, lanes)
        assert math.isfinite(phi) and phi <= 0
        for i in range(n):
            assert agent_reward(x, v, u, i, SPEC, lanes) <= 0


def merge_abstraction(spec, gamma=0.9):
    """Two-vehicle tabular export of the merge: grid states, three accelerations each.

    Each vehicle's local state is a (position, speed) grid cell; its next cell is
    the bicycle step from the cell centre snapped back onto the grid, so only
    its own action matters.  Rewards come straight from the merge reward terms.
    """
    xs = {0: np.array([140.0, 160.0]), 1: np.array([150.0, 175.0])}
    vs = np.array([8.0, 12.0])
    accels = [-2.0, 0.0, 2.0]
    lanes = [RAMP, TARGET]
    cells = {i: [(x, v) for x in xs[i] for v in vs] for i in (0, 1)}
    kernels = []
    for i in (0, 1):
        K = np.zeros((4, 3, 4))
        for s, (x, v) in enumerate(cells[i]):
            for a, u in enumerate(accels):
                nxt = step_vehicle(VehicleState(x, 0.0, v), VehicleAction(u), 2.0, VehicleGeometry())
                ix = int(np.argmin(np.abs(xs[i] - nxt.x)))
                iv = int(np.argmin(np.abs(vs - nxt.v)))
                K[s, a, 2 * ix + iv] = 1.0
        kernels.append(K)
    P = factored_transition(kernels)
    R = np.zeros((2, 16, 3, 3))
    phi = np.zeros((16, 3, 3))
    for s0 in range(4):
        for s1 in range(4):
            s = 4 * s0 + s1
            x = [cells[0][s0][0], cells[1][s1][0]]
            v = [cells[0][s0][1], cells[1][s1][1]]
            for a0 in range(3):
                for a1 in range(3):
                    u = [accels[a0], accels[a1]]
                    for i in (0, 1):
                        R[i, s, a0, a1] = agent_reward(x, v, u, i, spec, lanes)
                    phi[s, a0, a1] = potential_function(x, v, u, spec, lanes)
    game = TabularGame(P, R, gamma, np.full(16, 1 / 16), local_state_counts=(4, 4), policy_class="local")
    return game, StatePotential(phi)


def test_exported_abstraction_is_potential_game():
    game, phi = merge_abstraction(MergeRewardSpec(eps=0.1))
    assert verify_transition_independence(game)
    rep = verify_mpg(game, phi, sample_deviations=200, tol=1e-8)
    assert rep.is_mpg_on_samples, rep.to_dict()


def test_abstraction_with_asymmetric_weighting_is_not():
    game, phi = merge_abstraction(MergeRewardSpec(eps=0.1))
    R = game.rewards.copy()
    R[1] *= 2.0  # agent 2 counts the shared terms twice: no longer an MPG with this phi
    rep = verify_mpg(game.with_rewards(R), phi, sample_deviations=50)
    assert rep.max_violation > 1e-3
