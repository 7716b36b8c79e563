import numpy as np
import pytest
from hypothesis import given, strategies as st

from degrpo_lab.env import ControlToken
from degrpo_lab.errors import ConfigError
from degrpo_lab.reward import (RewardConfig, batch_advantages, compute_reward, group_advantages,
                               reward_array)

SHORT, THINK = ControlToken.SHORT, ControlToken.THINK


def test_reward_cases():
    cfg = RewardConfig(0.1)
    assert compute_reward(SHORT, True, cfg) == 1.0
    assert compute_reward(THINK, True, cfg) == 0.9
    assert compute_reward(THINK, False, cfg) == -1.0
    assert compute_reward(SHORT, False, cfg) == -1.0


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 1.5])
def test_gamma_range(gamma):
    with pytest.raises(ConfigError):
        RewardConfig(gamma).validate()


@given(st.floats(1e-6, 1 - 1e-6), st.sampled_from([SHORT, THINK]), st.booleans())
def test_reward_range(gamma, mode, ok):
    r = compute_reward(mode, ok, RewardConfig(gamma))
    assert r in (1.0, 1.0 - gamma, -1.0)
    assert reward_array(np.array([mode]), np.array([ok]), gamma)[0] == r


@given(st.floats(0.01, 0.49), st.floats(0.5, 0.99))
def test_think_correct_reward_decreases_in_gamma(g1, g2):
    assert compute_reward(THINK, True, RewardConfig(g1)) > compute_reward(THINK, True, RewardConfig(g2))
    assert compute_reward(SHORT, True, RewardConfig(g1)) == compute_reward(SHORT, True, RewardConfig(g2))


def test_advantage_examples():
    np.testing.assert_array_equal(group_advantages([1.0] * 4), np.zeros(4))
    np.testing.assert_array_equal(group_advantages([1.0, -1.0]), [1.0, -1.0])
    np.testing.assert_allclose(group_advantages([1.0, 0.9, -1.0, -1.0]), [1.025, 0.925, -0.975, -0.975],
                               atol=1e-15)


def test_advantage_needs_two():
    with pytest.raises(ConfigError):
        group_advantages([1.0])
    with pytest.raises(ConfigError):
        batch_advantages(np.ones(4), 1)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=32))
def test_advantages_zero_sum(rewards):
    assert abs(group_advantages(rewards).sum()) <= 1e-12 * max(1.0, max(abs(r) for r in rewards))


@given(st.lists(st.sampled_from([1.0, 0.9, -1.0]), min_size=2, max_size=16))
def test_advantages_zero_sum_on_reward_values(rewards):
    assert abs(group_advantages(rewards).sum()) <= 1e-12


@given(st.lists(st.sampled_from(["sc", "tc", "sw", "tw"]), min_size=0, max_size=10),
       st.floats(0.01, 0.99))
def test_short_correct_beats_think_correct(extra, gamma):
    outcomes = ["sc", "tc"] + extra
    table = {"sc": (SHORT, True), "tc": (THINK, True), "sw": (SHORT, False), "tw": (THINK, False)}
    rewards = [compute_reward(*table[o], RewardConfig(gamma)) for o in outcomes]
    adv = group_advantages(rewards)
    assert adv[0] > adv[1]


@given(st.integers(2, 8), st.integers(1, 6), st.integers(0, 1000))
def test_batch_matches_per_group(g, n_groups, seed):
    r = np.random.default_rng(seed).choice([1.0, 0.9, -1.0], size=g * n_groups)
    want = np.concatenate([group_advantages(r[i * g:(i + 1) * g]) for i in range(n_groups)])
    np.testing.assert_array_equal(batch_advantages(r, g), want)
