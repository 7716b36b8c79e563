"""Run configuration: JSON schema, presets, and flag overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from .env import EnvConfig, build_env, profiles_from_dicts
from .errors import ConfigError
from .objective import ObjectiveConfig, Variant
from .reward import RewardConfig
from .trainer import TrainConfig

PRESETS = ("vanilla-collapse", "degrpo-ucurve", "alpha-sweep")

ENV_KEYS = {"classes", "profiles", "t_short", "t_think", "answer_vocab", "scratch_vocab", "seed"}
TRAIN_KEYS = {"steps", "batch_queries", "group_size", "inner_epochs", "learning_rate", "adam_beta1",
              "adam_beta2", "adam_eps", "weight_decay", "seed", "variant", "epsilon", "beta", "alpha", "gamma"}
WARMUP_KEYS = {"p0_short", "p0_think"}
SWEEP_KEYS = {"alphas", "seeds", "threshold_fraction"}
TOP_KEYS = {"preset", "env", "warmup", "train", "sweep", "output_dir"}

_INT_KEYS = {"classes", "t_short", "t_think", "answer_vocab", "scratch_vocab", "seed", "steps",
             "batch_queries", "group_size", "inner_epochs"}


@dataclass
class RunConfig:
    env: EnvConfig
    env_seed: int
    warmup: dict
    train: TrainConfig
    preset: Optional[str] = None
    output_dir: Optional[str] = None
    sweep: dict = field(default_factory=dict)

    def build_env(self):
        return build_env(self.env, self.env_seed)

    def to_dict(self) -> dict:
        e, t = self.env, self.train
        return {
            "preset": self.preset,
            "env": {
                "classes": e.num_query_classes,
                "profiles": [{"name": p.name, "eta_short": p.eta_short, "eta_think": p.eta_think,
                              "weight": p.weight} for p in e.profiles],
                "t_short": e.t_short, "t_think": e.t_think,
                "answer_vocab": e.vocab_answer_size, "scratch_vocab": e.vocab_scratch_size,
                "seed": self.env_seed,
            },
            "warmup": copy.deepcopy(self.warmup),
            "train": {
                "steps": t.steps, "batch_queries": t.batch_queries, "group_size": t.group_size,
                "inner_epochs": t.inner_epochs, "learning_rate": t.learning_rate,
                "adam_beta1": t.adam_beta1, "adam_beta2": t.adam_beta2, "adam_eps": t.adam_eps,
                "weight_decay": t.weight_decay, "seed": t.seed,
                "variant": Variant.parse(t.objective.variant).value, "epsilon": t.objective.epsilon,
                "beta": t.objective.beta, "alpha": t.objective.alpha, "gamma": t.reward.gamma,
            },
            "sweep": copy.deepcopy(self.sweep),
            "output_dir": self.output_dir,
        }

    def validate(self) -> None:
        self.env.validate()
        self.train.validate()
        for key in WARMUP_KEYS:
            if key not in self.warmup:
                raise ConfigError("missing", field=f"warmup.{key}")
        # warm start validates p0 ranges and profile coverage
        from .policy import warmup_init
        warmup_init(self.build_env(), self.warmup["p0_short"], self.warmup["p0_think"])


def _check_keys(section: dict, allowed: set, name: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError("must be an object", field=name)
    extra = sorted(set(section) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) {', '.join(extra)}", field=name)


def _num(section: dict, key: str, default, where: str):
    if key not in section:
        return default
    v = section[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"must be a number, got {v!r}", field=f"{where}.{key}")
    if key in _INT_KEYS:
        if float(v) != int(v):
            raise ConfigError(f"must be an integer, got {v!r}", field=f"{where}.{key}")
        return int(v)
    return float(v)


def from_dict(doc: dict) -> RunConfig:
    _check_keys(doc, TOP_KEYS, "config")
    env_d = doc.get("env", {})
    train_d = doc.get("train", {})
    warm_d = doc.get("warmup", {})
    sweep_d = doc.get("sweep", {}) or {}
    _check_keys(env_d, ENV_KEYS, "env")
    _check_keys(train_d, TRAIN_KEYS, "train")
    _check_keys(warm_d, WARMUP_KEYS, "warmup")
    _check_keys(sweep_d, SWEEP_KEYS, "sweep")

    defaults = EnvConfig()
    profiles = profiles_from_dicts(env_d["profiles"]) if "profiles" in env_d else defaults.profiles
    env = EnvConfig(
        num_query_classes=_num(env_d, "classes", defaults.num_query_classes, "env"),
        profiles=profiles,
        t_short=_num(env_d, "t_short", defaults.t_short, "env"),
        t_think=_num(env_d, "t_think", defaults.t_think, "env"),
        vocab_answer_size=_num(env_d, "answer_vocab", defaults.vocab_answer_size, "env"),
        vocab_scratch_size=_num(env_d, "scratch_vocab", defaults.vocab_scratch_size, "env"),
    )
    td = TrainConfig()
    obj = ObjectiveConfig(
        epsilon=_num(train_d, "epsilon", td.objective.epsilon, "train"),
        beta=_num(train_d, "beta", td.objective.beta, "train"),
        alpha=_num(train_d, "alpha", td.objective.alpha, "train"),
        variant=Variant.parse(train_d.get("variant", td.objective.variant)),
    )
    train = TrainConfig(
        steps=_num(train_d, "steps", td.steps, "train"),
        batch_queries=_num(train_d, "batch_queries", td.batch_queries, "train"),
        group_size=_num(train_d, "group_size", td.group_size, "train"),
        inner_epochs=_num(train_d, "inner_epochs", td.inner_epochs, "train"),
        learning_rate=_num(train_d, "learning_rate", td.learning_rate, "train"),
        adam_beta1=_num(train_d, "adam_beta1", td.adam_beta1, "train"),
        adam_beta2=_num(train_d, "adam_beta2", td.adam_beta2, "train"),
        adam_eps=_num(train_d, "adam_eps", td.adam_eps, "train"),
        weight_decay=_num(train_d, "weight_decay", td.weight_decay, "train"),
        seed=_num(train_d, "seed", td.seed, "train"),
        objective=obj,
        reward=RewardConfig(gamma=_num(train_d, "gamma", td.reward.gamma, "train")),
    )
    warmup = {"p0_short": warm_d.get("p0_short", 0.5), "p0_think": warm_d.get("p0_think", 0.9)}
    return RunConfig(env, _num(env_d, "seed", 0, "env"), warmup, train, doc.get("preset"),
                     doc.get("output_dir"), dict(sweep_d))


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return from_dict(doc)


def load_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}", field="preset")
    text = resources.files("degrpo_lab.presets").joinpath(f"{name}.json").read_text()
    return from_dict(json.loads(text))


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply flag overrides (``None`` means not given)."""
    t = cfg.train
    obj, rew = t.objective, t.reward
    o = {k: v for k, v in overrides.items() if v is not None}
    if "variant" in o:
        obj = replace(obj, variant=Variant.parse(o["variant"]))
    for key in ("alpha", "beta", "epsilon"):
        if key in o:
            obj = replace(obj, **{key: float(o[key])})
    if "gamma" in o:
        rew = replace(rew, gamma=float(o["gamma"]))
    t = replace(t, objective=obj, reward=rew)
    if "seed" in o:
        t = replace(t, seed=int(o["seed"]))
    if "steps" in o:
        t = replace(t, steps=int(o["steps"]))
    out = replace(cfg, train=t)
    if "output_dir" in o:
        out = replace(out, output_dir=str(o["output_dir"]))
    return out
