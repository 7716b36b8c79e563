"""Central finite differences as an independent check on the analytic gradients.

Rollouts are frozen before differencing, so the objective is a deterministic
function of theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .env import Environment, build_env, EnvConfig
from .objective import ObjectiveConfig, Variant, evaluate
from .policy import PolicyParams, RolloutBatch, Role, policy_tables, sample_rollouts, snapshot, warmup_init
from .reward import batch_advantages, reward_array


@dataclass
class GradReport:
    coordinates_checked: int
    max_rel_error: float
    worst_coordinate: int
    step_size: float
    rel_tol: float = math.inf
    skipped: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.coordinates_checked > 0 and self.max_rel_error <= self.rel_tol


def finite_difference_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray,
                               coordinates: Sequence[int], h: float = 1e-5) -> tuple:
    """Central differences of ``f`` at ``theta`` along each coordinate.

    Returns ``(coordinates, values, skipped)``; coordinates whose evaluation is
    not finite are left out and listed in ``skipped``.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.array(theta, dtype=np.float64, copy=True)
    kept, values, skipped = [], [], []
    for k in coordinates:
        k = int(k)
        orig = x[k]
        x[k] = orig + h
        fp = f(x)
        x[k] = orig - h
        fm = f(x)
        x[k] = orig
        d = (fp - fm) / (2.0 * h)
        if math.isfinite(d):
            kept.append(k)
            values.append(d)
        else:
            skipped.append(k)
    return np.array(kept, dtype=np.int64), np.array(values), skipped


def verify(analytic: np.ndarray, numeric: np.ndarray, rel_tol: float = 1e-5, abs_floor: float = 1e-8,
           coordinates: Sequence[int] = None, step_size: float = math.nan) -> GradReport:
    """Worst ``|a - n| / max(|a|, |n|, abs_floor)`` over the checked coordinates."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    if a.size == 0:
        return GradReport(0, 0.0, -1, step_size, rel_tol)
    err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), abs_floor)
    i = int(np.argmax(err))
    ids = np.arange(a.size) if coordinates is None else np.asarray(coordinates)
    return GradReport(int(a.size), float(err[i]), int(ids[i]), step_size, rel_tol)


def visited_coordinates(batch: RolloutBatch) -> tuple:
    """(control ids, response ids) of every weight in a context the batch visits."""
    lay = batch.layout
    classes = np.unique(batch.cls)
    ctrl = np.concatenate([np.arange(2 * k, 2 * k + 2) for k in classes])
    resp = []
    for k in classes:
        sl = lay.block(int(k), Role.SCRATCH)
        resp.append(np.arange(sl.start, sl.stop))
        for m in np.unique(batch.mode[batch.cls == k]):
            sl = lay.block(int(k), Role.ANSWER, int(m))
            resp.append(np.arange(sl.start, sl.stop))
    return ctrl, np.concatenate(resp)


def choose_coordinates(batch: RolloutBatch, n: int, rng: np.random.Generator) -> np.ndarray:
    """Half control weights, half response weights, drawn uniformly from visited contexts."""
    ctrl, resp = visited_coordinates(batch)
    n_ctrl = min(len(ctrl), n // 2)
    n_resp = min(len(resp), n - n_ctrl)
    pick = np.concatenate([rng.choice(ctrl, n_ctrl, replace=False), rng.choice(resp, n_resp, replace=False)])
    return np.sort(pick)


def kink_distance(batch: RolloutBatch, params: PolicyParams, epsilon: float) -> float:
    """Smallest distance of any token ratio from ``1 - eps`` or ``1 + eps``."""
    _, fid, old_lp = batch.flat_tokens()
    ratio = np.exp(policy_tables(params).logp[fid] - old_lp)
    return float(np.min(np.minimum(np.abs(ratio - (1 - epsilon)), np.abs(ratio - (1 + epsilon)))))


@dataclass
class FrozenProblem:
    batch: RolloutBatch
    params: PolicyParams
    old: PolicyParams
    ref: PolicyParams


def frozen_problem(env: Environment = None, seed: int = 0, groups: int = 8, group_size: int = 4,
                   spread: float = 0.15, epsilon: float = 0.2, margin: float = 1e-3,
                   max_tries: int = 200) -> FrozenProblem:
    """A scored rollout batch plus live/old/ref params with every ratio at least
    ``margin`` away from a clip boundary (some ratios do sit beyond it)."""
    env = env or build_env(EnvConfig(num_query_classes=6), seed=seed)
    rng = np.random.default_rng(seed)
    base = warmup_init(env, 0.6, 0.8)
    old = PolicyParams(base.layout, base.theta + rng.normal(0.0, 0.5, base.layout.size))
    ref = snapshot(PolicyParams(base.layout, base.theta + rng.normal(0.0, 0.5, base.layout.size)))
    old = snapshot(old)
    classes = rng.choice(env.num_classes, groups)
    cls = np.repeat(classes, group_size)
    batch = sample_rollouts(old, cls, rng, group=np.repeat(np.arange(groups), group_size))
    answers = batch.tokens[np.arange(batch.size), batch.length - 1]
    truth = np.asarray(env.truth)[batch.cls]
    batch.correct = (answers == truth) & (rng.random(batch.size) >= env.eta_table()[batch.cls, batch.mode])
    batch.reward = reward_array(batch.mode, batch.correct, 0.1)
    batch.advantage = batch_advantages(batch.reward, group_size)
    for _ in range(max_tries):
        live = PolicyParams(old.layout, old.theta + rng.normal(0.0, spread, old.layout.size))
        if kink_distance(batch, live, epsilon) > margin:
            return FrozenProblem(batch, live, old, ref)
    raise RuntimeError("could not find a parameter point away from the clip kinks")


def check_objective(problem: FrozenProblem, cfg: ObjectiveConfig, n_coords: int = 64, h: float = 1e-5,
                    rel_tol: float = 1e-5, abs_floor: float = 1e-7, seed: int = 0) -> GradReport:
    """Compare the analytic objective gradient with central differences.

    The default ``abs_floor`` sits above the roundoff of a difference quotient of
    a mean over a few hundred tokens (about 1e-12 at h = 1e-5).
    """
    rep = evaluate(problem.batch, problem.params, problem.old, problem.ref, cfg)
    layout = problem.params.layout

    def f(theta):
        return evaluate(problem.batch, PolicyParams(layout, theta), problem.old, problem.ref, cfg,
                        check_old=False).value

    coords = choose_coordinates(problem.batch, n_coords, np.random.default_rng(seed))
    kept, numeric, skipped = finite_difference_gradient(f, problem.params.theta, coords, h)
    report = verify(rep.gradient[kept], numeric, rel_tol, abs_floor, coordinates=kept, step_size=h)
    report.skipped = skipped
    return report


def check_all(seed: int = 0, n_coords: int = 64, h: float = 1e-5, rel_tol: float = 1e-5,
              betas=(0.0, 1e-3), alpha: float = 1e-3, epsilon: float = 0.2) -> dict:
    """Both objective variants at each KL coefficient on one frozen problem."""
    problem = frozen_problem(seed=seed, epsilon=epsilon)
    out = {}
    for variant in (Variant.VANILLA_GRPO, Variant.DEGRPO):
        for beta in betas:
            cfg = ObjectiveConfig(epsilon=epsilon, beta=beta, alpha=alpha, variant=variant)
            out[(variant.value, beta)] = check_objective(problem, cfg, n_coords, h, rel_tol, seed=seed)
    return out
