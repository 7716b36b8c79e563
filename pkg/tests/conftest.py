import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from degrpo_lab.env import ControlToken, EnvConfig, Query, build_env
from degrpo_lab.policy import ParamLayout, PolicyParams, Trajectory

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def small_env():
    return build_env(EnvConfig(num_query_classes=6, t_short=2, t_think=6, vocab_answer_size=5,
                               vocab_scratch_size=4), seed=0)


@pytest.fixture
def default_env():
    return build_env(EnvConfig(), seed=0)


def random_params(layout: ParamLayout, rng, scale=1.0) -> PolicyParams:
    return PolicyParams(layout, scale * rng.standard_normal(layout.size))


def hand_trajectory(params: PolicyParams, query: Query, mode, tokens) -> Trajectory:
    """Trajectory with the given response tokens and log-probs recorded under ``params``."""
    from degrpo_lab.policy import trajectory_logprobs

    tr = Trajectory(ControlToken(mode), np.asarray(tokens, dtype=np.int64), np.zeros(len(tokens) + 1),
                    query, params.layout.answer_vocab)
    tr.logp = trajectory_logprobs(params, tr)
    return tr


def random_tokens(layout: ParamLayout, length: int, rng) -> list:
    scratch = [layout.answer_vocab + int(rng.integers(layout.scratch_vocab)) for _ in range(length - 1)]
    return scratch + [int(rng.integers(layout.answer_vocab))]


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, title, passed, detail)."""

    def record(number, title, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
