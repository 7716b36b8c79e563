import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from degrpo_lab.env import ControlToken, EnvConfig, build_env
from degrpo_lab.errors import ConfigError
from degrpo_lab.objective import kl_penalty
from degrpo_lab.policy import (LOGIT_CAP, ParamLayout, PolicyParams, Role, control_distribution,
                               grad_logprob, load_params, policy_tables, sample_rollouts, sample_trajectory,
                               save_params, snapshot, token_distribution, trajectory_logprobs, warmup_init)

from conftest import hand_trajectory, random_params, random_tokens


def test_warmup_control_is_balanced(default_env):
    params = warmup_init(default_env, 0.5, 0.9)
    for k in range(default_env.num_classes):
        assert control_distribution(params, default_env.query(k)) == (0.5, 0.5)


def test_warmup_uniform_p0_gives_zero_logits(default_env):
    params = warmup_init(default_env, 0.1, 0.1)
    assert not params.theta.any()


def test_warmup_true_answer_logit(default_env):
    params = warmup_init(default_env, 0.9, 0.9)
    lay = params.layout
    q = default_env.query(4)
    fid = lay.feature_id(4, Role.ANSWER, q.truth, ControlToken.SHORT)
    assert params.theta[fid] == pytest.approx(math.log(0.9 * 9 / 0.1), abs=1e-12)
    assert abs(params.theta[fid] - 4.394) < 1e-3
    block = params.theta[lay.block(4, Role.ANSWER, ControlToken.SHORT)]
    assert np.count_nonzero(block) == 1
    p = token_distribution(params, q, ControlToken.SHORT, lay.t_short - 1)
    assert p[q.truth] == pytest.approx(0.9, abs=1e-14)


def test_warmup_per_profile_values(default_env):
    params = warmup_init(default_env, {"easy": 0.5, "medium": 0.4, "hard": 0.3}, 0.9)
    for k, want in ((0, 0.5), (1, 0.4), (2, 0.3)):
        q = default_env.query(k)
        assert token_distribution(params, q, 0, 1)[q.truth] == pytest.approx(want, abs=1e-14)
        assert token_distribution(params, q, 1, 49)[q.truth] == pytest.approx(0.9, abs=1e-14)


@pytest.mark.parametrize("bad", [0.0, 1.0, [0.5, 0.5], {"easy": 0.5}])
def test_warmup_rejects_bad_p0(default_env, bad):
    with pytest.raises(ConfigError):
        warmup_init(default_env, bad, 0.9)


def test_scratch_uniform_after_warmup(default_env):
    params = warmup_init(default_env, 0.9, 0.9)
    p = token_distribution(params, default_env.query(0), ControlToken.THINK, 3)
    np.testing.assert_array_equal(p, np.full(8, 1 / 8))


def test_control_distribution_values(small_env):
    lay = ParamLayout.for_env(small_env)
    params = PolicyParams(lay, np.zeros(lay.size))
    q = small_env.query(1)
    assert control_distribution(params, q) == (0.5, 0.5)
    params.theta[lay.block(1, Role.CONTROL)] = [2.0, 0.0]
    ps, _ = control_distribution(params, q)
    assert ps == pytest.approx(math.e ** 2 / (math.e ** 2 + 1), abs=1e-15)
    assert abs(ps - 0.8808) < 1e-4
    params.theta[lay.block(1, Role.CONTROL)] += 7.5
    assert control_distribution(params, q)[0] == pytest.approx(ps, abs=1e-15)


def test_zero_theta_answer_uniform(small_env):
    lay = ParamLayout.for_env(small_env)
    params = PolicyParams(lay, np.zeros(lay.size))
    np.testing.assert_allclose(token_distribution(params, small_env.query(0), 1, lay.t_think - 1), 0.2)


def test_token_distribution_position_range(small_env):
    params = warmup_init(small_env, 0.5, 0.5)
    with pytest.raises(ValueError):
        token_distribution(params, small_env.query(0), ControlToken.SHORT, 2)


def test_saturated_think_gives_think_length(small_env):
    lay = ParamLayout.for_env(small_env)
    params = warmup_init(small_env, 0.5, 0.5)
    params.theta[:lay.scratch_offset].reshape(-1, 2)[:] = [-1e6, 1e6]
    batch = sample_rollouts(params, np.arange(6).repeat(50), np.random.default_rng(0))
    assert (batch.mode == ControlToken.THINK).all()
    assert (batch.length == lay.t_think).all()


def test_sampled_logp_matches_distribution(small_env):
    rng = np.random.default_rng(4)
    params = random_params(ParamLayout.for_env(small_env), rng)
    q = small_env.query(3)
    for _ in range(20):
        tr = sample_trajectory(params, q, rng)
        np.testing.assert_array_equal(tr.logp, trajectory_logprobs(params, tr))
        assert tr.logp[0] == pytest.approx(math.log(control_distribution(params, q)[int(tr.control)]), abs=1e-14)
        for j, tok in enumerate(tr.response):
            p = token_distribution(params, q, tr.control, j)
            local = tok if j == tr.length - 1 else tok - small_env.answer_vocab
            assert tr.logp[j + 1] == pytest.approx(math.log(p[local]), abs=1e-14)
        assert (tr.logp <= 0).all()


def test_sampling_template_lengths(small_env):
    params = warmup_init(small_env, 0.5, 0.5)
    batch = sample_rollouts(params, np.zeros(400, dtype=np.int64), np.random.default_rng(1))
    want = np.where(batch.mode == ControlToken.THINK, 6, 2)
    np.testing.assert_array_equal(batch.length, want)
    assert 0 < batch.mode.mean() < 1


def test_sampling_is_deterministic(small_env):
    params = warmup_init(small_env, 0.5, 0.5)
    q = small_env.query(0)
    a = sample_trajectory(params, q, np.random.default_rng(9))
    b = sample_trajectory(params, q, np.random.default_rng(9))
    assert a.control == b.control
    np.testing.assert_array_equal(a.response, b.response)
    np.testing.assert_array_equal(a.logp, b.logp)


def test_sampling_frequencies_follow_policy(small_env):
    lay = ParamLayout.for_env(small_env)
    params = PolicyParams(lay, np.zeros(lay.size))
    params.theta[lay.block(2, Role.CONTROL)] = [math.log(3.0), 0.0]     # P(SHORT) = 0.75
    batch = sample_rollouts(params, np.full(40_000, 2), np.random.default_rng(2))
    assert abs(np.mean(batch.mode == ControlToken.SHORT) - 0.75) < 0.01


def test_grad_logprob_uniform_vocab10():
    env = build_env(EnvConfig(num_query_classes=3, vocab_answer_size=10), 0)
    lay = ParamLayout.for_env(env)
    params = PolicyParams(lay, np.zeros(lay.size))
    g = grad_logprob(params, env.query(0), ControlToken.SHORT, 1, 3)
    want = np.full(10, -0.1)
    want[3] = 0.9
    np.testing.assert_allclose(g.values, want, atol=1e-15)


def test_grad_logprob_saturated_is_zero(small_env):
    lay = ParamLayout.for_env(small_env)
    params = PolicyParams(lay, np.zeros(lay.size))
    params.theta[lay.block(0, Role.CONTROL)] = [LOGIT_CAP, -LOGIT_CAP]
    g = grad_logprob(params, small_env.query(0), ControlToken.SHORT, None, ControlToken.SHORT)
    assert not g.values.any()


@given(hnp.arrays(np.float64, 4, elements=st.floats(-10, 10)), st.integers(0, 3))
def test_grad_logprob_sums_to_zero(logits, tok):
    env = build_env(EnvConfig(num_query_classes=3, vocab_answer_size=4), 0)
    lay = ParamLayout.for_env(env)
    params = PolicyParams(lay, np.zeros(lay.size))
    params.theta[lay.block(1, Role.ANSWER, ControlToken.THINK)] = logits
    g = grad_logprob(params, env.query(1), ControlToken.THINK, lay.t_think - 1, tok)
    assert abs(g.values.sum()) <= 1e-12


@given(st.integers(0, 10_000))
def test_score_function_identity(seed):
    rng = np.random.default_rng(seed)
    env = build_env(EnvConfig(num_query_classes=3, t_think=5, vocab_answer_size=4, vocab_scratch_size=3), 0)
    lay = ParamLayout.for_env(env)
    params = random_params(lay, rng, 3.0)
    q = env.query(int(rng.integers(3)))
    mode = ControlToken(int(rng.integers(2)))
    pos = int(rng.integers(lay.template_length(mode)))
    p = token_distribution(params, q, mode, pos)
    assert abs(p.sum() - 1) <= 1e-12
    base = 0 if pos == lay.template_length(mode) - 1 else lay.answer_vocab
    acc = sum(p[v] * grad_logprob(params, q, mode, pos, base + v).values for v in range(len(p)))
    assert np.abs(acc).max() <= 1e-10


def test_grad_logprob_matches_finite_differences(small_env):
    rng = np.random.default_rng(0)
    lay = ParamLayout.for_env(small_env)
    params = random_params(lay, rng)
    q = small_env.query(4)
    h = 1e-5
    cases = [(ControlToken.THINK, None, ControlToken.THINK), (ControlToken.SHORT, 0, 5 + 2),
             (ControlToken.THINK, lay.t_think - 1, 3)]
    for mode, pos, tok in cases:
        g = grad_logprob(params, q, mode, pos, tok)

        def f(theta):
            pp = PolicyParams(lay, theta)
            if pos is None:
                return math.log(control_distribution(pp, q)[int(tok)])
            local = tok if pos == lay.template_length(mode) - 1 else tok - lay.answer_vocab
            return math.log(token_distribution(pp, q, mode, pos)[local])

        for idx, a in zip(g.indices, g.values):
            e = np.zeros(lay.size)
            e[idx] = h
            n = (f(params.theta + e) - f(params.theta - e)) / (2 * h)
            assert abs(a - n) / max(abs(a), abs(n), 1e-8) <= 1e-6


@given(st.floats(-50, 50))
def test_shift_invariance(c):
    env = build_env(EnvConfig(num_query_classes=3, vocab_answer_size=4), 0)
    lay = ParamLayout.for_env(env)
    params = random_params(lay, np.random.default_rng(0))
    shifted = PolicyParams(lay, params.theta.copy())
    sl = lay.block(0, Role.SCRATCH)
    shifted.theta[sl] += c
    # the shift must stay inside the logit cap to be exact
    if np.abs(shifted.theta[sl]).max() < LOGIT_CAP:
        np.testing.assert_allclose(token_distribution(shifted, env.query(0), 1, 0),
                                   token_distribution(params, env.query(0), 1, 0), atol=1e-12)


def test_policy_tables_normalized(small_env):
    params = random_params(ParamLayout.for_env(small_env), np.random.default_rng(1), 5.0)
    tab = policy_tables(params)
    starts, sizes = params.layout.block_bounds()
    for s, n in zip(starts, sizes):
        assert abs(tab.prob[s:s + n].sum() - 1) <= 1e-12
        assert tab.cdf[s + n - 1] == 1.0


def test_snapshot_isolation(small_env):
    rng = np.random.default_rng(3)
    live = random_params(ParamLayout.for_env(small_env), rng)
    snap = snapshot(live)
    assert snap.frozen
    q = small_env.query(0)
    tr = sample_trajectory(live, q, rng)
    before = trajectory_logprobs(snap, tr)
    np.testing.assert_array_equal(np.exp(trajectory_logprobs(live, tr) - before), 1.0)
    assert kl_penalty(live, snap, tr)[0] == 0.0
    live.theta += 1.0
    np.testing.assert_array_equal(trajectory_logprobs(snap, tr), before)
    with pytest.raises(ValueError):
        snap.theta[0] = 1.0


@pytest.mark.parametrize("suffix", [".bin", ".json"])
def test_save_load_roundtrip(tmp_path, small_env, suffix):
    params = random_params(ParamLayout.for_env(small_env), np.random.default_rng(0))
    path = tmp_path / f"p{suffix}"
    save_params(params, path)
    back = load_params(path, expect=params.layout)
    np.testing.assert_array_equal(back.theta, params.theta)
    assert back.layout == params.layout


def test_load_rejects_other_layout(tmp_path, small_env):
    params = random_params(ParamLayout.for_env(small_env), np.random.default_rng(0))
    save_params(params, tmp_path / "p.bin")
    other = ParamLayout(7, 5, 4, 2, 6)
    with pytest.raises(ConfigError):
        load_params(tmp_path / "p.bin", expect=other)


def test_params_shape_checked(small_env):
    with pytest.raises(ConfigError):
        PolicyParams(ParamLayout.for_env(small_env), np.zeros(3))


def test_out_of_vocab_token_rejected(small_env):
    params = warmup_init(small_env, 0.5, 0.5)
    q = small_env.query(0)
    tr = hand_trajectory(params, q, 0, [5, 1])
    tr.response = np.array([1, 1])
    with pytest.raises(ValueError):
        trajectory_logprobs(params, tr)


def test_hand_trajectory_helper(small_env):
    params = warmup_init(small_env, 0.5, 0.5)
    rng = np.random.default_rng(0)
    tr = hand_trajectory(params, small_env.query(1), 1, random_tokens(params.layout, 6, rng))
    assert tr.length == 6 and tr.logp.shape == (7,)
