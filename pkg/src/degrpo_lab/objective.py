"""Clipped token surrogate, the vanilla GRPO and the decoupled objectives, KL penalty.

Both objectives are evaluated by one kernel that walks every token once and
accumulates ``d objective / d log pi(token)`` into the token's weight slot;
the softmax score then turns those per-slot coefficients into the gradient:
``grad[block] = coef[block] - sum(coef[block]) * pi[block]``.

Per-trajectory weights (control, response, KL):

    vanilla   1/(T+1), 1/(T+1), 1/(T+1)
    decoupled alpha,   1/T,     1/(T+1)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import kernels
from .errors import ConfigError, IntegrityError
from .policy import (PolicyParams, Role, RolloutBatch, Trajectory, capped_mask, context_block,
                     policy_tables, _softmax)
from .reward import GroupBatch

LOGP_TOLERANCE = 1e-9


class Variant(str, enum.Enum):
    VANILLA_GRPO = "vanilla"
    DEGRPO = "degrpo"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"vanilla": cls.VANILLA_GRPO, "vanilla_grpo": cls.VANILLA_GRPO, "grpo": cls.VANILLA_GRPO,
                   "degrpo": cls.DEGRPO, "decoupled": cls.DEGRPO}
        if key not in aliases:
            raise ConfigError(f"unknown variant {value!r} (use 'vanilla' or 'degrpo')", field="variant")
        return aliases[key]


@dataclass(frozen=True)
class ObjectiveConfig:
    epsilon: float = 0.2
    beta: float = 1e-3
    alpha: float = 1e-3
    variant: Variant = Variant.DEGRPO

    def validate(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError(f"must be > 0, got {self.epsilon}", field="epsilon")
        if not self.beta >= 0:
            raise ConfigError(f"must be >= 0, got {self.beta}", field="beta")
        if not self.alpha > 0:
            raise ConfigError(f"must be > 0, got {self.alpha}", field="alpha")
        Variant.parse(self.variant)


@dataclass
class ObjectiveReport:
    value: float
    gradient: np.ndarray
    control_term: float
    response_term: float
    kl_term: float
    control_terms: np.ndarray     # per trajectory, weighted
    response_terms: np.ndarray
    kl_terms: np.ndarray          # per trajectory KL estimate (token average)
    clip_fraction: float
    trajectory_terms: np.ndarray = None   # unsplit per-trajectory term, see evaluate

    @property
    def per_trajectory(self) -> np.ndarray:
        """Inner surrogate term of each trajectory (control + response, no KL)."""
        return self.control_terms + self.response_terms


def token_surrogate(ratio: float, advantage: float, epsilon: float) -> float:
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def control_weight(length: int, cfg: ObjectiveConfig) -> float:
    if Variant.parse(cfg.variant) is Variant.DEGRPO:
        return cfg.alpha
    return 1.0 / (length + 1)


def response_weight(length: int, cfg: ObjectiveConfig) -> float:
    if Variant.parse(cfg.variant) is Variant.DEGRPO:
        return 1.0 / length
    return 1.0 / (length + 1)


def kl_weight(length: int) -> float:
    return 1.0 / (length + 1)


def as_batch(groups: Union[RolloutBatch, Sequence[GroupBatch]], layout) -> RolloutBatch:
    if isinstance(groups, RolloutBatch):
        if groups.advantage is None:
            raise ValueError("rollout batch has no advantages")
        return groups
    trajectories, gid, adv = [], [], []
    for g, grp in enumerate(groups):
        if len(grp.advantages) != len(grp.trajectories):
            raise ValueError(f"group {g}: {len(grp.trajectories)} trajectories but "
                             f"{len(grp.advantages)} advantages")
        trajectories.extend(grp.trajectories)
        gid.extend([g] * len(grp.trajectories))
        adv.extend(grp.advantages)
    if not trajectories:
        raise ValueError("no trajectories to evaluate")
    return RolloutBatch.from_trajectories(layout, trajectories, group=gid, advantage=adv)


def _weights(batch: RolloutBatch, cfg: ObjectiveConfig) -> tuple:
    t = batch.length.astype(np.float64)
    if Variant.parse(cfg.variant) is Variant.DEGRPO:
        w_ctrl = np.full(batch.size, float(cfg.alpha))
        w_resp = 1.0 / t
    else:
        w_ctrl = 1.0 / (t + 1.0)
        w_resp = w_ctrl.copy()
    return w_ctrl, w_resp, 1.0 / (t + 1.0)


def _score_project(coef: np.ndarray, prob: np.ndarray, layout) -> np.ndarray:
    vs, va = layout.scratch_vocab, layout.answer_vocab
    out = np.empty_like(coef)
    for lo, hi, width in ((0, layout.scratch_offset, 2),
                          (layout.scratch_offset, layout.answer_offset, vs),
                          (layout.answer_offset, layout.size, va)):
        cb = coef[lo:hi].reshape(-1, width)
        pb = prob[lo:hi].reshape(-1, width)
        out[lo:hi] = (cb - cb.sum(axis=1, keepdims=True) * pb).ravel()
    return out


def evaluate(groups, params: PolicyParams, old: PolicyParams, ref: PolicyParams,
             cfg: ObjectiveConfig, check_old: bool = True) -> ObjectiveReport:
    """Objective value and exact gradient for either variant (ascent direction)."""
    cfg.validate()
    layout = params.layout
    if old.layout != layout or ref.layout != layout:
        raise ConfigError("params, old and ref have different dimensions")
    batch = as_batch(groups, layout)
    offsets, fid, old_lp = batch.flat_tokens()
    if check_old:
        drift = np.abs(policy_tables(old).logp[fid] - old_lp)
        if drift.size and drift.max() > LOGP_TOLERANCE:
            raise IntegrityError(f"recorded log-probs differ from the old policy by {drift.max():.3e} "
                                 f"(tolerance {LOGP_TOLERANCE:g}); rollouts come from another snapshot")
    tab = policy_tables(params)
    ref_lp = policy_tables(ref).logp
    w_ctrl, w_resp, w_kl = _weights(batch, cfg)
    n = batch.size
    loss0, loss_resp, klsum, coef, n_clipped = kernels.surrogate(
        offsets, fid, old_lp, np.ascontiguousarray(batch.advantage, dtype=np.float64),
        w_ctrl, w_resp, w_kl, tab.logp, ref_lp, float(cfg.epsilon), float(cfg.beta), 1.0 / n, layout.size)
    gradient = _score_project(coef, tab.prob, layout) * capped_mask(params)
    n_tok = batch.length + 1.0
    if Variant.parse(cfg.variant) is Variant.VANILLA_GRPO:
        control_terms = loss0 / n_tok
        response_terms = loss_resp / n_tok
        # one average over all T+1 token terms, without the control/response split
        trajectory_terms = (loss0 + loss_resp) / n_tok
    else:
        control_terms = w_ctrl * loss0
        response_terms = loss_resp / batch.length
        trajectory_terms = control_terms + response_terms
    kl_terms = w_kl * klsum
    surrogate_mean = float(np.mean(control_terms + response_terms))
    kl_mean = float(np.mean(kl_terms))
    return ObjectiveReport(
        value=surrogate_mean - cfg.beta * kl_mean,
        gradient=gradient,
        control_term=float(np.mean(control_terms)),
        response_term=float(np.mean(response_terms)),
        kl_term=kl_mean,
        control_terms=control_terms,
        response_terms=response_terms,
        kl_terms=kl_terms,
        clip_fraction=n_clipped / max(len(fid), 1),
        trajectory_terms=trajectory_terms,
    )


def grpo_objective(groups, params, old, ref, cfg: ObjectiveConfig) -> ObjectiveReport:
    if Variant.parse(cfg.variant) is not Variant.VANILLA_GRPO:
        raise ConfigError("grpo_objective needs variant=vanilla", field="variant")
    return evaluate(groups, params, old, ref, cfg)


def degrpo_objective(groups, params, old, ref, cfg: ObjectiveConfig) -> ObjectiveReport:
    if Variant.parse(cfg.variant) is not Variant.DEGRPO:
        raise ConfigError("degrpo_objective needs variant=degrpo", field="variant")
    return evaluate(groups, params, old, ref, cfg)


def decompose_trajectory_loss(trajectory: Trajectory, params: PolicyParams, old: PolicyParams,
                              cfg: ObjectiveConfig, advantage: float) -> tuple:
    """(control term, response term) of one trajectory under the vanilla 1/(T+1) weighting."""
    vanilla = ObjectiveConfig(cfg.epsilon, 0.0, cfg.alpha, Variant.VANILLA_GRPO)
    grp = GroupBatch(trajectory.query, [trajectory], np.array([advantage], dtype=float))
    rep = evaluate([grp], params, old, old, vanilla)
    return float(rep.control_terms[0]), float(rep.response_terms[0])


def _token_contexts(params: PolicyParams, trajectory: Trajectory):
    """Yield (context slice, local token index) for every token, control first."""
    lay = params.layout
    q, mode = trajectory.query, trajectory.control
    yield context_block(lay, q, mode, None), int(mode)
    t = trajectory.length
    for j, tok in enumerate(trajectory.response):
        role_answer = j == t - 1
        sl = lay.block(q.class_id, Role.ANSWER, mode) if role_answer else lay.block(q.class_id, Role.SCRATCH)
        yield sl, int(tok) if role_answer else int(tok) - lay.answer_vocab


def kl_penalty(params: PolicyParams, ref: PolicyParams, trajectory: Trajectory) -> tuple:
    """Token-averaged ``rho - log rho - 1`` estimate of KL(params || ref) and its gradient.

    ``rho = pi_ref / pi_theta`` at the sampled token; the gradient of each
    token's estimate is ``(1 - rho) * grad log pi_theta``.
    """
    grad = np.zeros(params.layout.size)
    mask = capped_mask(params)
    total = 0.0
    count = 0
    for sl, local in _token_contexts(params, trajectory):
        p = _softmax(params, sl)
        pr = _softmax(ref, sl)
        log_rho = math.log(pr[local]) - math.log(p[local])
        rho = math.exp(log_rho)
        total += max(rho - log_rho - 1.0, 0.0)
        score = -p
        score[local] += 1.0
        grad[sl] += (1.0 - rho) * score * mask[sl]
        count += 1
    return total / count, grad / count


def exact_kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) for two strictly positive distributions."""
    return float(np.sum(p * (np.log(p) - np.log(q))))
