"""The RL loop: snapshot, roll out groups, score, take AdamW ascent steps, record metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .env import ControlToken, Environment, judge_batch, sample_class_ids
from .errors import ConfigError, TrainingAborted
from .objective import ObjectiveConfig, evaluate
from .policy import PolicyParams, ParamLayout, RolloutBatch, sample_rollouts, snapshot
from .reward import RewardConfig, batch_advantages, reward_array

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 600
    batch_queries: int = 64
    group_size: int = 8
    inner_epochs: int = 4
    learning_rate: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def validate(self, allow_zero_steps: bool = False) -> None:
        if self.steps < (0 if allow_zero_steps else 1):
            raise ConfigError(f"must be >= 1, got {self.steps}", field="steps")
        if self.batch_queries < 1:
            raise ConfigError(f"must be >= 1, got {self.batch_queries}", field="batch_queries")
        if self.group_size < 2:
            raise ConfigError(f"must be >= 2, got {self.group_size}", field="group_size")
        if self.inner_epochs < 1:
            raise ConfigError(f"must be >= 1, got {self.inner_epochs}", field="inner_epochs")
        if not self.learning_rate > 0:
            raise ConfigError(f"must be > 0, got {self.learning_rate}", field="learning_rate")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"must lie in [0, 1), got {b}", field=name)
        if not self.adam_eps > 0:
            raise ConfigError(f"must be > 0, got {self.adam_eps}", field="adam_eps")
        if not self.weight_decay >= 0:
            raise ConfigError(f"must be >= 0, got {self.weight_decay}", field="weight_decay")
        self.objective.validate()
        self.reward.validate()


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(theta: np.ndarray, gradient: np.ndarray, state: AdamState, cfg: TrainConfig) -> tuple:
    """One AdamW step that *ascends* the objective.

    Decay is decoupled: ``theta <- theta * (1 - lr * wd) + lr * m_hat / (sqrt(v_hat) + eps)``.
    """
    if not np.all(np.isfinite(gradient)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    t = state.t + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = b1 * state.m + (1.0 - b1) * gradient
    v = b2 * state.v + (1.0 - b2) * gradient * gradient
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new = theta * (1.0 - cfg.learning_rate * cfg.weight_decay) if cfg.weight_decay else theta.copy()
    new = new + cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("adam_step produced non-finite parameters")
    return new, AdamState(m, v, t)


@dataclass
class MetricsRecord:
    step: int
    think_fraction: float
    acc_short: Optional[float]
    acc_think: Optional[float]
    all_correct_short: int
    mean_reward: float
    objective_value: float
    kl: float
    think_fraction_by_profile: dict
    n_think: int = 0
    n_short: int = 0
    clip_fraction: float = 0.0


def collect_metrics(step: int, batch: RolloutBatch, env: Environment, group_size: int,
                    objective_value: float = math.nan, kl: float = math.nan,
                    clip_fraction: float = 0.0) -> MetricsRecord:
    """Per-step statistics of one batch of scored rollouts.

    Accuracy of a mode that produced no rollout is None (missing), not 0.
    """
    think = batch.mode == ControlToken.THINK
    n = batch.size
    n_think = int(think.sum())
    correct = batch.correct

    def acc(mask):
        return float(correct[mask].mean()) if mask.any() else None

    short_ok = ((~think) & correct).reshape(-1, group_size)
    prof = np.asarray(env.profile_index)[batch.cls]
    by_profile = {}
    for j, p in enumerate(env.profiles):
        sel = prof == j
        by_profile[p.name] = float(think[sel].mean()) if sel.any() else None
    return MetricsRecord(
        step=step,
        think_fraction=n_think / n,
        acc_short=acc(~think),
        acc_think=acc(think),
        all_correct_short=int(short_ok.all(axis=1).sum()),
        mean_reward=float(batch.reward.mean()),
        objective_value=float(objective_value),
        kl=float(kl),
        think_fraction_by_profile=by_profile,
        n_think=n_think,
        n_short=n - n_think,
        clip_fraction=float(clip_fraction),
    )


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(step)]))


def rollout_step(env: Environment, old: PolicyParams, cfg: TrainConfig, rng: np.random.Generator) -> RolloutBatch:
    """Sample ``batch_queries`` groups of ``group_size`` rollouts, judge, reward, and
    attach group-relative advantages."""
    queries = sample_class_ids(env, rng, cfg.batch_queries)
    cls = np.repeat(queries, cfg.group_size)
    group = np.repeat(np.arange(cfg.batch_queries), cfg.group_size)
    batch = sample_rollouts(old, cls, rng, group=group)
    answers = batch.tokens[np.arange(batch.size), batch.length - 1]
    batch.correct = judge_batch(env, batch.cls, batch.mode, answers, rng.random(batch.size))
    batch.reward = reward_array(batch.mode, batch.correct, cfg.reward.gamma)
    batch.advantage = batch_advantages(batch.reward, cfg.group_size)
    return batch


def _dump(dump_dir, step, batch, params) -> Optional[str]:
    if dump_dir is None:
        return None
    path = Path(dump_dir) / f"abort_step{step}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, theta=params.theta, cls=batch.cls, mode=batch.mode, tokens=batch.tokens,
             logp=batch.logp, reward=batch.reward, advantage=batch.advantage)
    return str(path)


def run_training(env: Environment, init: PolicyParams, cfg: TrainConfig,
                 ref: Optional[PolicyParams] = None,
                 on_step: Optional[Callable[[MetricsRecord], None]] = None,
                 dump_dir=None) -> tuple:
    """Train from ``init``; returns (final params, list of MetricsRecord).

    The reference policy defaults to a snapshot of ``init`` and is never refreshed.
    Every step draws from its own stream seeded by ``(seed, step)``.
    """
    cfg.validate(allow_zero_steps=True)
    if init.layout != ParamLayout.for_env(env):
        raise ConfigError("initial params do not match the environment dimensions", field="params")
    ref = snapshot(init) if ref is None else ref
    live = PolicyParams(init.layout, init.theta.copy())
    state = AdamState.zeros(init.layout.size)
    history = []
    for step in range(cfg.steps):
        old = snapshot(live)
        batch = rollout_step(env, old, cfg, step_rng(cfg.seed, step))
        first = None
        for epoch in range(cfg.inner_epochs):
            rep = evaluate(batch, live, old, ref, cfg.objective, check_old=(epoch == 0))
            if first is None:
                first = rep
            if not (math.isfinite(rep.value) and np.all(np.isfinite(rep.gradient))):
                path = _dump(dump_dir, step, batch, live)
                raise TrainingAborted(f"non-finite objective at step {step}, epoch {epoch}"
                                      + (f"; batch dumped to {path}" if path else ""), step, path)
            try:
                theta, state = adam_step(live.theta, rep.gradient, state, cfg)
            except FloatingPointError as exc:
                path = _dump(dump_dir, step, batch, live)
                raise TrainingAborted(f"step {step}: {exc}" + (f"; batch dumped to {path}" if path else ""),
                                      step, path) from None
            live = PolicyParams(live.layout, theta)
        rec = collect_metrics(step, batch, env, cfg.group_size, first.value, first.kl_term, first.clip_fraction)
        history.append(rec)
        if on_step is not None:
            on_step(rec)
        if step % 50 == 0:
            logger.debug("step %d think=%.3f reward=%.3f", step, rec.think_fraction, rec.mean_reward)
    return live, history
