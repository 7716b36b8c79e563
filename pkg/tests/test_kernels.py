import numpy as np
import pytest
from hypothesis import given, strategies as st

from degrpo_lab import kernels
from degrpo_lab.kernels import _fallback
from degrpo_lab.objective import token_surrogate
from degrpo_lab.policy import ParamLayout, policy_tables, sample_rollouts, warmup_init

from conftest import random_params

core = pytest.importorskip("degrpo_lab.kernels._core", reason="compiled extension not built")


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")


def _case(small_env, seed, n=64):
    rng = np.random.default_rng(seed)
    lay = ParamLayout.for_env(small_env)
    old = random_params(lay, rng)
    live = random_params(lay, rng)
    ref = random_params(lay, rng)
    cls = rng.integers(lay.num_classes, size=n)
    batch = sample_rollouts(old, cls, rng)
    offsets, fid, old_lp = batch.flat_tokens()
    adv = rng.standard_normal(n)
    w = rng.random((3, n))
    return lay, old, live, ref, cls, offsets, fid, old_lp, adv, w


@given(st.integers(0, 2**20))
def test_sampling_backends_identical(seed):
    from degrpo_lab.env import EnvConfig, build_env
    env = build_env(EnvConfig(num_query_classes=6, t_think=6, vocab_answer_size=5, vocab_scratch_size=4), 0)
    lay = ParamLayout.for_env(env)
    rng = np.random.default_rng(seed)
    tab = policy_tables(random_params(lay, rng, 2.0))
    cls = rng.integers(lay.num_classes, size=32)
    u = rng.random((32, lay.t_think + 1))
    args = (cls, u, tab.cdf, tab.logp, lay.num_classes, lay.answer_vocab, lay.scratch_vocab,
            lay.t_short, lay.t_think)
    for a, b in zip(core.sample_tokens(*args), _fallback.sample_tokens(*args)):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_surrogate_backends_agree(small_env, seed):
    lay, old, live, ref, cls, offsets, fid, old_lp, adv, w = _case(small_env, seed)
    lp, ref_lp = policy_tables(live).logp, policy_tables(ref).logp
    args = (offsets, fid, old_lp, adv, w[0], w[1], w[2], lp, ref_lp, 0.2, 1e-3, 1 / 64, lay.size)
    a, b = core.surrogate(*args), _fallback.surrogate(*args)
    for x, y in zip(a[:4], b[:4]):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-15)
    assert a[4] == b[4]


@pytest.mark.parametrize("mod", [core, _fallback], ids=["cython", "python"])
def test_surrogate_matches_token_loop(small_env, mod):
    lay, old, live, ref, cls, offsets, fid, old_lp, adv, w = _case(small_env, 9, n=16)
    lp, ref_lp = policy_tables(live).logp, policy_tables(ref).logp
    loss0, loss_resp, klsum, _, _ = mod.surrogate(offsets, fid, old_lp, adv, *w, lp, ref_lp, 0.2, 1e-3,
                                                  1 / 16, lay.size)
    for i in range(16):
        toks = range(offsets[i], offsets[i + 1])
        terms = [token_surrogate(float(np.exp(lp[fid[t]] - old_lp[t])), adv[i], 0.2) for t in toks]
        assert loss0[i] == pytest.approx(terms[0], abs=1e-14)
        assert loss_resp[i] == pytest.approx(sum(terms[1:]), abs=1e-12)
        rho = [np.exp(ref_lp[fid[t]] - lp[fid[t]]) for t in toks]
        assert klsum[i] == pytest.approx(sum(r - np.log(r) - 1 for r in rho), abs=1e-12)


def test_fallback_end_to_end(small_env, monkeypatch):
    """Training metrics do not depend on which backend is active."""
    from degrpo_lab import objective, policy
    from degrpo_lab.trainer import TrainConfig, run_training

    init = warmup_init(small_env, 0.5, 0.9)
    cfg = TrainConfig(steps=5, batch_queries=8, group_size=4)
    _, fast = run_training(small_env, init, cfg)
    monkeypatch.setattr(objective, "kernels", _fallback)
    monkeypatch.setattr(policy, "kernels", _fallback)
    _, slow = run_training(small_env, init, cfg)
    for a, b in zip(fast, slow):
        assert a.think_fraction == b.think_fraction and a.all_correct_short == b.all_correct_short
        assert a.objective_value == pytest.approx(b.objective_value, abs=1e-12)
