"""Vanilla GRPO and decoupled GRPO on a synthetic hybrid-reasoning task."""

from .env import (ControlToken, DifficultyProfile, EnvConfig, Environment, Query, build_env,
                  extract_answer, judge, sample_query)
from .errors import ConfigError, IntegrityError, TrainingAborted
from .kernels import BACKEND
from .objective import (ObjectiveConfig, ObjectiveReport, Variant, decompose_trajectory_loss,
                        degrpo_objective, grpo_objective, kl_penalty, token_surrogate)
from .policy import (PolicyParams, Trajectory, control_distribution, grad_logprob, load_params,
                     sample_trajectory, save_params, snapshot, token_distribution, warmup_init)
from .reward import GroupBatch, RewardConfig, compute_reward, group_advantages
from .trainer import MetricsRecord, TrainConfig, adam_step, collect_metrics, run_training

__version__ = "0.1.0"
