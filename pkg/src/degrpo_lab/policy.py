"""Log-linear policy over a control token followed by a fixed-length response.

Every logit is a single weight, so ``theta`` is laid out as three blocks of
independent softmax contexts::

    control   (class, mode)                       2 * C weights
    scratch   (class, scratch token)              C * Vs weights
    answer    (class, mode, answer token)         2 * C * Va weights

The answer block is split by mode so the warm start can give the two modes
different answer competence. Logits are capped to [-LOGIT_CAP, LOGIT_CAP].
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import kernels
from .env import ControlToken, Environment, Query
from .errors import ConfigError

LOGIT_CAP = 30.0


class Role(enum.IntEnum):
    CONTROL = 0
    SCRATCH = 1
    ANSWER = 2


@dataclass(frozen=True)
class ParamLayout:
    num_classes: int
    answer_vocab: int
    scratch_vocab: int
    t_short: int
    t_think: int

    @classmethod
    def for_env(cls, env: Environment) -> "ParamLayout":
        c = env.config
        return cls(c.num_query_classes, c.vocab_answer_size, c.vocab_scratch_size, c.t_short, c.t_think)

    @property
    def scratch_offset(self) -> int:
        return 2 * self.num_classes

    @property
    def answer_offset(self) -> int:
        return self.scratch_offset + self.num_classes * self.scratch_vocab

    @property
    def size(self) -> int:
        return self.answer_offset + 2 * self.num_classes * self.answer_vocab

    def template_length(self, mode) -> int:
        return self.t_think if mode == ControlToken.THINK else self.t_short

    def block(self, class_id: int, role: Role, mode=None) -> slice:
        """Slice of theta holding one softmax context."""
        if role == Role.CONTROL:
            s = 2 * class_id
            return slice(s, s + 2)
        if role == Role.SCRATCH:
            s = self.scratch_offset + class_id * self.scratch_vocab
            return slice(s, s + self.scratch_vocab)
        s = self.answer_offset + (2 * class_id + int(mode)) * self.answer_vocab
        return slice(s, s + self.answer_vocab)

    def feature_id(self, class_id: int, role: Role, token: int, mode=None) -> int:
        """Index of the weight for ``token`` in one context.

        Scratch tokens are given in the shared token space (``answer_vocab + s``).
        """
        if role == Role.SCRATCH:
            token = token - self.answer_vocab
        return self.block(class_id, role, mode).start + int(token)

    def block_bounds(self) -> tuple:
        """(starts, sizes) of every softmax context in theta order."""
        c, vs, va = self.num_classes, self.scratch_vocab, self.answer_vocab
        sizes = np.concatenate([np.full(c, 2), np.full(c, vs), np.full(2 * c, va)]).astype(np.int64)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        return starts, sizes

    def header(self) -> dict:
        return {"classes": self.num_classes, "answer_vocab": self.answer_vocab,
                "scratch_vocab": self.scratch_vocab, "t_short": self.t_short, "t_think": self.t_think}


@dataclass
class PolicyParams:
    layout: ParamLayout
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.layout.size,):
            raise ConfigError(f"theta has shape {self.theta.shape}, layout needs ({self.layout.size},)")

    @property
    def frozen(self) -> bool:
        return not self.theta.flags.writeable

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.theta)):
            raise FloatingPointError("non-finite policy parameters")


def snapshot(params: PolicyParams) -> PolicyParams:
    """Read-only deep copy, used for the old and the reference policy."""
    theta = params.theta.copy()
    theta.setflags(write=False)
    return PolicyParams(params.layout, theta)


class Tables(NamedTuple):
    logp: np.ndarray   # log-softmax of every context, theta-shaped
    prob: np.ndarray
    cdf: np.ndarray    # per-context running sums, last entry of each context forced to 1


def policy_tables(params: PolicyParams) -> Tables:
    lay = params.layout
    c, vs, va = lay.num_classes, lay.scratch_vocab, lay.answer_vocab
    z = np.clip(params.theta, -LOGIT_CAP, LOGIT_CAP)
    parts = (z[:lay.scratch_offset].reshape(c, 2),
             z[lay.scratch_offset:lay.answer_offset].reshape(c, vs),
             z[lay.answer_offset:].reshape(2 * c, va))
    logp, prob, cdf = [], [], []
    for block in parts:
        m = block.max(axis=1, keepdims=True)
        shifted = block - m
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        lp = shifted - lse
        p = np.exp(lp)
        cs = np.cumsum(p, axis=1)
        cs[:, -1] = 1.0
        logp.append(lp.ravel())
        prob.append(p.ravel())
        cdf.append(cs.ravel())
    return Tables(np.concatenate(logp), np.concatenate(prob), np.concatenate(cdf))


def capped_mask(params: PolicyParams) -> np.ndarray:
    """1 where the logit cap is inactive (derivative of the clip), else 0."""
    t = params.theta
    return ((t > -LOGIT_CAP) & (t < LOGIT_CAP)).astype(np.float64)


def warmup_init(env: Environment, p0_short, p0_think) -> PolicyParams:
    """Balanced warm start.

    Both control logits are zero (P(THINK) = 0.5). In each mode the true
    answer gets logit ``log(p0 * (Va - 1) / (1 - p0))`` and every other answer
    0, which makes its softmax probability exactly ``p0``. ``p0_short`` and
    ``p0_think`` are a scalar, a per-profile sequence, or a name -> value map.
    """
    lay = ParamLayout.for_env(env)
    theta = np.zeros(lay.size)
    va = lay.answer_vocab
    per_mode = {ControlToken.SHORT: _per_profile(env, p0_short, "p0_short"),
                ControlToken.THINK: _per_profile(env, p0_think, "p0_think")}
    for k in range(lay.num_classes):
        j = env.profile_index[k]
        for mode, values in per_mode.items():
            p0 = values[j]
            if va == 1:
                continue
            theta[lay.feature_id(k, Role.ANSWER, env.truth[k], mode)] = np.log(p0 * (va - 1) / (1.0 - p0))
    return PolicyParams(lay, theta)


def _per_profile(env: Environment, value, name: str) -> list:
    profiles = env.profiles
    if isinstance(value, dict):
        try:
            vals = [float(value[p.name]) for p in profiles]
        except KeyError as exc:
            raise ConfigError(f"no value for profile {exc.args[0]!r}", field=name) from None
    elif np.ndim(value) == 0:
        vals = [float(value)] * len(profiles)
    else:
        vals = [float(v) for v in value]
        if len(vals) != len(profiles):
            raise ConfigError(f"expected {len(profiles)} values, got {len(vals)}", field=name)
    for v in vals:
        if not 0.0 < v < 1.0:
            raise ConfigError(f"must lie strictly inside (0, 1), got {v}", field=name)
    return vals


def control_distribution(params: PolicyParams, query: Query) -> tuple:
    """(P(SHORT | x), P(THINK | x))."""
    return tuple(float(p) for p in _softmax(params, params.layout.block(query.class_id, Role.CONTROL)))


def token_distribution(params: PolicyParams, query: Query, mode, position: int) -> np.ndarray:
    """Distribution at response ``position`` (0-based) of the ``mode`` template.

    The last position is the answer slot (answer vocabulary); earlier positions
    are scratch slots (scratch vocabulary).
    """
    lay = params.layout
    length = lay.template_length(mode)
    if not 0 <= position < length:
        raise ValueError(f"position {position} outside template of length {length}")
    role = Role.ANSWER if position == length - 1 else Role.SCRATCH
    return _softmax(params, lay.block(query.class_id, role, mode))


def _softmax(params: PolicyParams, sl: slice) -> np.ndarray:
    z = np.clip(params.theta[sl], -LOGIT_CAP, LOGIT_CAP)
    e = np.exp(z - z.max())
    return e / e.sum()


class SparseGrad(NamedTuple):
    indices: np.ndarray
    values: np.ndarray

    def to_dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.indices] = self.values
        return out


def context_block(layout: ParamLayout, query: Query, mode, position: Optional[int]) -> slice:
    if position is None:
        return layout.block(query.class_id, Role.CONTROL)
    length = layout.template_length(mode)
    role = Role.ANSWER if position == length - 1 else Role.SCRATCH
    return layout.block(query.class_id, role, mode)


def grad_logprob(params: PolicyParams, query: Query, mode, position: Optional[int], token: int) -> SparseGrad:
    """Score function of one token: ``e_token - softmax`` on its context block.

    ``position=None`` selects the control token (``token`` is then the
    ControlToken); otherwise ``position`` indexes the response and ``token`` is
    in the shared token space.
    """
    lay = params.layout
    sl = context_block(lay, query, mode, position)
    p = _softmax(params, sl)
    local = int(token)
    if position is not None and sl.start < lay.answer_offset:
        local -= lay.answer_vocab
    if not 0 <= local < len(p):
        raise ValueError(f"token {token} not in the vocabulary of this position")
    g = -p
    g[local] += 1.0
    g *= capped_mask(params)[sl]
    return SparseGrad(np.arange(sl.start, sl.stop), g)


@dataclass
class Trajectory:
    control: ControlToken
    response: np.ndarray
    logp: np.ndarray
    query: Query
    answer_vocab: int
    correct: Optional[bool] = None
    reward: Optional[float] = None

    @property
    def length(self) -> int:
        return len(self.response)


@dataclass
class RolloutBatch:
    """Columnar rollouts; rows are grouped consecutively by ``group``."""

    layout: ParamLayout
    cls: np.ndarray       # (N,) class id
    mode: np.ndarray      # (N,) ControlToken value
    length: np.ndarray    # (N,) response length T_i
    tokens: np.ndarray    # (N, t_max) response tokens, -1 padded
    logp: np.ndarray      # (N, t_max + 1) recorded log-probs, control first, 0 padded
    group: np.ndarray     # (N,) group index
    correct: Optional[np.ndarray] = None
    reward: Optional[np.ndarray] = None
    advantage: Optional[np.ndarray] = None
    _flat: Optional[tuple] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.cls)

    def flat_tokens(self) -> tuple:
        """(offsets, feature ids, recorded log-probs) in CSR form, control first per row."""
        if self._flat is None:
            self._flat = _flatten(self)
        return self._flat

    def trajectory(self, i: int, query: Query) -> Trajectory:
        t = int(self.length[i])
        return Trajectory(ControlToken(int(self.mode[i])), self.tokens[i, :t].copy(),
                          self.logp[i, :t + 1].copy(), query, self.layout.answer_vocab,
                          None if self.correct is None else bool(self.correct[i]),
                          None if self.reward is None else float(self.reward[i]))

    @classmethod
    def from_trajectories(cls, layout: ParamLayout, trajectories: Sequence[Trajectory],
                          group=None, advantage=None) -> "RolloutBatch":
        n = len(trajectories)
        t_max = max([layout.t_think] + [tr.length for tr in trajectories])
        tokens = np.full((n, t_max), -1, dtype=np.int64)
        logp = np.zeros((n, t_max + 1))
        for i, tr in enumerate(trajectories):
            if tr.length < 1:
                raise ValueError("trajectory has an empty response; it cannot be scored")
            if len(tr.logp) != tr.length + 1:
                raise ValueError("logp must hold one entry per token including the control token")
            tokens[i, :tr.length] = tr.response
            logp[i, :tr.length + 1] = tr.logp
        batch = cls(layout,
                    np.array([tr.query.class_id for tr in trajectories], dtype=np.int64),
                    np.array([int(tr.control) for tr in trajectories], dtype=np.int64),
                    np.array([tr.length for tr in trajectories], dtype=np.int64),
                    tokens, logp,
                    np.zeros(n, dtype=np.int64) if group is None else np.asarray(group, dtype=np.int64))
        if all(tr.correct is not None for tr in trajectories):
            batch.correct = np.array([tr.correct for tr in trajectories], dtype=bool)
        if all(tr.reward is not None for tr in trajectories):
            batch.reward = np.array([tr.reward for tr in trajectories], dtype=float)
        if advantage is not None:
            batch.advantage = np.asarray(advantage, dtype=float)
        return batch


def _flatten(batch: RolloutBatch) -> tuple:
    lay = batch.layout
    n = batch.size
    lengths = batch.length
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths + 1, out=offsets[1:])
    m = int(offsets[-1])
    fid = np.empty(m, dtype=np.int64)
    old = np.empty(m)
    pos = np.arange(batch.tokens.shape[1])
    valid = pos[None, :] < lengths[:, None]
    is_answer = pos[None, :] == (lengths[:, None] - 1)
    tok = batch.tokens
    va, vs = lay.answer_vocab, lay.scratch_vocab
    bad = valid & ((is_answer & ((tok < 0) | (tok >= va))) | (~is_answer & ((tok < va) | (tok >= va + vs))))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"trajectory {i}: token {tok[i, j]} at response position {j} is outside that "
                         "position's vocabulary")
    resp_fid = np.where(
        is_answer,
        lay.answer_offset + (2 * batch.cls[:, None] + batch.mode[:, None]) * va + tok,
        lay.scratch_offset + batch.cls[:, None] * vs + (tok - va))
    ctrl_fid = 2 * batch.cls + batch.mode
    full_fid = np.concatenate([ctrl_fid[:, None], resp_fid], axis=1)
    full_valid = np.concatenate([np.ones((n, 1), dtype=bool), valid], axis=1)
    fid[:] = full_fid[full_valid]
    old[:] = batch.logp[:, :full_fid.shape[1]][full_valid]
    return offsets, fid, old


def sample_rollouts(params: PolicyParams, class_ids: np.ndarray, rng: np.random.Generator,
                    group: Optional[np.ndarray] = None) -> RolloutBatch:
    """Sample one trajectory per entry of ``class_ids`` by inverse-CDF draws."""
    lay = params.layout
    class_ids = np.asarray(class_ids, dtype=np.int64)
    n = len(class_ids)
    u = rng.random((n, lay.t_think + 1))
    tab = policy_tables(params)
    mode, tokens, logp = kernels.sample_tokens(
        class_ids, u, tab.cdf, tab.logp, lay.num_classes, lay.answer_vocab, lay.scratch_vocab,
        lay.t_short, lay.t_think)
    length = np.where(mode == ControlToken.THINK, lay.t_think, lay.t_short).astype(np.int64)
    return RolloutBatch(lay, class_ids, mode, length, tokens, logp,
                        np.zeros(n, dtype=np.int64) if group is None else np.asarray(group, dtype=np.int64))


def sample_trajectory(params: PolicyParams, query: Query, rng: np.random.Generator) -> Trajectory:
    batch = sample_rollouts(params, np.array([query.class_id]), rng)
    return batch.trajectory(0, query)


def trajectory_logprobs(params: PolicyParams, trajectory: Trajectory) -> np.ndarray:
    """Per-token log-probabilities of a trajectory under ``params`` (control first)."""
    batch = RolloutBatch.from_trajectories(params.layout, [trajectory])
    _, fid, _ = batch.flat_tokens()
    return policy_tables(params).logp[fid]


_MAGIC = b"DGRPOPRM"


def save_params(params: PolicyParams, path) -> None:
    """Write params as JSON (``.json`` suffix) or as magic + JSON header + float64 LE data."""
    path = Path(path)
    header = params.layout.header()
    if path.suffix == ".json":
        path.write_text(json.dumps({"header": header, "theta": params.theta.tolist()}))
        return
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(params.theta, dtype="<f8").tobytes())


def load_params(path, expect: Optional[ParamLayout] = None) -> PolicyParams:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        header, theta = doc["header"], np.array(doc["theta"], dtype=float)
    else:
        raw = path.read_bytes()
        if raw[:8] != _MAGIC:
            raise ValueError(f"{path}: not a params file")
        (hlen,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12:12 + hlen])
        theta = np.frombuffer(raw[12 + hlen:], dtype="<f8").astype(np.float64)
    layout = ParamLayout(header["classes"], header["answer_vocab"], header["scratch_vocab"],
                         header["t_short"], header["t_think"])
    if expect is not None and layout != expect:
        raise ConfigError(f"params dimensions {layout.header()} do not match environment {expect.header()}",
                          field="params")
    return PolicyParams(layout, theta)
