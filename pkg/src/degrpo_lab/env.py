"""Synthetic hybrid-reasoning environment.

Each query class has a ground-truth answer token and a difficulty profile.
A response is a fixed-length template whose last token is the answer; the
profile gives the probability that a truth-emitting response is still judged
wrong, separately for the short and the think mode.

Token ids share one space: answer tokens are ``0 .. answer_vocab-1`` and
scratch tokens are ``answer_vocab .. answer_vocab+scratch_vocab-1``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError


class ControlToken(enum.IntEnum):
    SHORT = 0
    THINK = 1


@dataclass(frozen=True)
class DifficultyProfile:
    name: str
    eta_short: float
    eta_think: float
    weight: float

    def __post_init__(self):
        for key in ("eta_short", "eta_think", "weight"):
            v = getattr(self, key)
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise ConfigError(f"must lie in [0, 1], got {v}", field=f"profiles[{self.name}].{key}")

    def eta(self, mode: ControlToken) -> float:
        return self.eta_think if mode == ControlToken.THINK else self.eta_short


DEFAULT_PROFILES = (
    DifficultyProfile("easy", 0.0, 0.0, 1 / 3),
    DifficultyProfile("medium", 0.3, 0.05, 1 / 3),
    DifficultyProfile("hard", 0.8, 0.1, 1 / 3),
)


@dataclass(frozen=True)
class EnvConfig:
    num_query_classes: int = 30
    profiles: tuple = DEFAULT_PROFILES
    t_short: int = 2
    t_think: int = 50
    vocab_answer_size: int = 10
    vocab_scratch_size: int = 8

    def validate(self) -> None:
        if self.num_query_classes < 1:
            raise ConfigError("must be positive", field="classes")
        if not self.profiles:
            raise ConfigError("at least one profile required", field="profiles")
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            raise ConfigError("profile names must be unique", field="profiles")
        total = math.fsum(p.weight for p in self.profiles)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"weights must sum to 1, got {total!r}", field="profiles")
        if self.t_short < 2:
            raise ConfigError("must be >= 2", field="t_short")
        if self.t_think <= self.t_short:
            raise ConfigError("must be strictly greater than t_short", field="t_think")
        if self.vocab_answer_size < 1:
            raise ConfigError("must be positive", field="answer_vocab")
        if self.vocab_scratch_size < 1:
            raise ConfigError("must be positive", field="scratch_vocab")
        # round-robin assignment: profile j owns classes j, j+P, ...
        owned = min(self.num_query_classes, len(self.profiles))
        for p in self.profiles[owned:]:
            if p.weight > 0:
                raise ConfigError(
                    f"profile {p.name!r} has positive weight but no query class "
                    f"(only {self.num_query_classes} classes)", field="classes")


@dataclass(frozen=True)
class Query:
    class_id: int
    difficulty: DifficultyProfile
    truth: int


@dataclass(frozen=True)
class Environment:
    config: EnvConfig
    seed: int
    profile_index: tuple          # class_id -> index into config.profiles
    truth: tuple                  # class_id -> answer token
    classes_by_profile: tuple     # profile index -> tuple of class ids
    _weights: np.ndarray = field(repr=False, compare=False)

    @property
    def num_classes(self) -> int:
        return self.config.num_query_classes

    @property
    def answer_vocab(self) -> int:
        return self.config.vocab_answer_size

    @property
    def scratch_vocab(self) -> int:
        return self.config.vocab_scratch_size

    @property
    def profiles(self) -> tuple:
        return self.config.profiles

    def template_length(self, mode) -> int:
        return self.config.t_think if mode == ControlToken.THINK else self.config.t_short

    def query(self, class_id: int) -> Query:
        return Query(class_id, self.config.profiles[self.profile_index[class_id]], self.truth[class_id])

    def is_answer_token(self, token: int) -> bool:
        return 0 <= token < self.answer_vocab

    def eta_table(self) -> np.ndarray:
        """(classes, 2) flip rates indexed by ``[class_id, mode]``."""
        out = np.empty((self.num_classes, 2))
        for k, j in enumerate(self.profile_index):
            p = self.config.profiles[j]
            out[k] = (p.eta_short, p.eta_think)
        return out


def build_env(config: EnvConfig, seed: int = 0) -> Environment:
    """Assign classes to profiles round-robin and ground truths round-robin over a
    seeded permutation of the answer vocabulary."""
    config.validate()
    n_prof = len(config.profiles)
    profile_index = tuple(k % n_prof for k in range(config.num_query_classes))
    perm = np.random.default_rng(seed).permutation(config.vocab_answer_size)
    truth = tuple(int(perm[k % config.vocab_answer_size]) for k in range(config.num_query_classes))
    by_profile = tuple(
        tuple(k for k in range(config.num_query_classes) if profile_index[k] == j) for j in range(n_prof))
    weights = np.array([p.weight for p in config.profiles], dtype=float)
    return Environment(config, seed, profile_index, truth, by_profile, weights)


def sample_class_ids(env: Environment, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` class ids: profile by weight, then a uniform class inside it."""
    cdf = np.cumsum(env._weights)
    cdf[-1] = 1.0
    u = rng.random((n, 2))
    prof = np.searchsorted(cdf, u[:, 0], side="right")
    # zero-weight profiles have an empty cdf interval, so searchsorted never lands on them
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        owned = env.classes_by_profile[prof[i]]
        out[i] = owned[min(int(u[i, 1] * len(owned)), len(owned) - 1)]
    return out


def sample_query(env: Environment, rng: np.random.Generator) -> Query:
    return env.query(int(sample_class_ids(env, rng, 1)[0]))


def extract_answer(trajectory) -> Optional[int]:
    """Answer token at the final template position, or None if there is none."""
    response = trajectory.response
    if len(response) == 0:
        return None
    tok = int(response[-1])
    return tok if 0 <= tok < trajectory.answer_vocab else None


def judge(trajectory, query: Query, rng: np.random.Generator) -> bool:
    """Correct iff the extracted answer matches and the mode's flip does not fire.

    One uniform is consumed from ``rng`` per call, matched or not, so replaying
    the stream replays the outcomes.
    """
    u = rng.random()
    if extract_answer(trajectory) != query.truth:
        return False
    return bool(u >= query.difficulty.eta(ControlToken(int(trajectory.control))))


def judge_batch(env: Environment, class_ids: np.ndarray, modes: np.ndarray, answers: np.ndarray,
                u: np.ndarray) -> np.ndarray:
    """Vectorized ``judge`` given pre-drawn uniforms ``u`` (one per trajectory)."""
    truth = np.asarray(env.truth)[class_ids]
    eta = env.eta_table()[class_ids, modes]
    return (answers == truth) & (u >= eta)


def profiles_from_dicts(items: Sequence[dict]) -> tuple:
    out = []
    for i, d in enumerate(items):
        try:
            out.append(DifficultyProfile(str(d["name"]), float(d["eta_short"]), float(d["eta_think"]),
                                         float(d["weight"])))
        except KeyError as exc:
            raise ConfigError(f"missing key {exc.args[0]!r}", field=f"profiles[{i}]") from None
    return tuple(out)
