"""Three-case reward with a short-answer margin, and group-relative advantages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import ControlToken, Query
from .errors import ConfigError


@dataclass(frozen=True)
class RewardConfig:
    gamma: float = 0.1

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"must lie strictly inside (0, 1), got {self.gamma}", field="gamma")


def compute_reward(control, correct: bool, cfg: RewardConfig) -> float:
    """1 for a correct short answer, 1 - gamma for a correct think answer, -1 otherwise."""
    if not correct:
        return -1.0
    return 1.0 if control == ControlToken.SHORT else 1.0 - cfg.gamma


def reward_array(modes: np.ndarray, correct: np.ndarray, gamma: float) -> np.ndarray:
    ok = np.where(np.asarray(modes) == ControlToken.SHORT, 1.0, 1.0 - gamma)
    return np.where(np.asarray(correct, dtype=bool), ok, -1.0)


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """``r - mean(r)`` with no standard-deviation scaling.

    The mean is taken relative to the first reward so a group of equal rewards
    yields exact zeros rather than rounding residue.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or len(r) < 2:
        raise ConfigError(f"a group needs at least 2 rewards, got {r.size}", field="group_size")
    d = r - r[0]
    return d - d.mean()


def batch_advantages(rewards: np.ndarray, group_size: int) -> np.ndarray:
    """Row-wise ``group_advantages`` for rewards stored as consecutive groups."""
    if group_size < 2:
        raise ConfigError(f"a group needs at least 2 rewards, got {group_size}", field="group_size")
    r = np.asarray(rewards, dtype=np.float64).reshape(-1, group_size)
    d = r - r[:, :1]
    return (d - d.mean(axis=1, keepdims=True)).ravel()


@dataclass
class GroupBatch:
    query: Query
    trajectories: list
    advantages: np.ndarray

    @classmethod
    def from_trajectories(cls, query: Query, trajectories: Sequence) -> "GroupBatch":
        for tr in trajectories:
            if tr.query.class_id != query.class_id:
                raise ValueError("all trajectories of a group must answer the same query")
            if tr.reward is None:
                raise ValueError("trajectories must be scored before computing advantages")
        return cls(query, list(trajectories), group_advantages([tr.reward for tr in trajectories]))
