"""Checks for the qualitative training-dynamics claims (collapse, rise-then-fall, stratification)."""

from __future__ import annotations

from dataclasses import dataclass
from statistics import median
from typing import Optional, Sequence

import numpy as np

from .env import ControlToken, Environment
from .policy import PolicyParams, policy_tables


@dataclass
class Verdict:
    passed: bool
    detail: str


def collapse(think_fraction: Sequence[float], within: int = 200, low: float = 0.05,
             recover: float = 0.10) -> Verdict:
    """One mode drops below ``low`` by step ``within`` and stays at or below ``recover`` afterwards."""
    tf = np.asarray(think_fraction, dtype=float)
    for t in range(min(within + 1, len(tf))):
        for mode, frac in ((ControlToken.THINK, tf), (ControlToken.SHORT, 1.0 - tf)):
            if frac[t] < low:
                peak = float(frac[t:].max())
                ok = peak <= recover
                return Verdict(ok, f"{mode.name} fell to {frac[t]:.3f} at step {t}; later max {peak:.3f}")
    span = min(within + 1, len(tf))
    lo = float(np.minimum(tf, 1 - tf)[:span].min()) if span else float("nan")
    return Verdict(False, f"no mode fell below {low} in the first {span} steps (min minority {lo:.3f})")


def smooth(values: Sequence[float], window: int = 20) -> np.ndarray:
    """Trailing moving average over full windows only."""
    v = np.asarray(values, dtype=float)
    if len(v) < window:
        return v.copy()
    c = np.concatenate(([0.0], np.cumsum(v)))
    return (c[window:] - c[:-window]) / window


def occupancy(think_fraction: Sequence[float], floor: float = 0.05) -> Verdict:
    tf = np.asarray(think_fraction, dtype=float)
    lo = float(np.minimum(tf, 1 - tf).min()) if len(tf) else 0.0
    return Verdict(lo >= floor, f"min occupancy {lo:.3f}")


def rise_then_fall(think_fraction: Sequence[float], window: int = 20, margin: float = 0.05,
                   floor: float = 0.05) -> Verdict:
    s = smooth(think_fraction, window)
    if len(s) == 0:
        return Verdict(False, "empty series")
    peak = float(s.max())
    occ = occupancy(think_fraction, floor)
    ok = peak - s[0] >= margin and peak - s[-1] >= margin and occ.passed
    return Verdict(ok, f"smoothed start {s[0]:.3f} peak {peak:.3f} end {s[-1]:.3f}; {occ.detail}")


def think_probability(params: PolicyParams, env: Environment) -> np.ndarray:
    """P(THINK | class) for every query class."""
    lay = params.layout
    prob = policy_tables(params).prob
    idx = np.arange(lay.num_classes) * 2 + int(ControlToken.THINK)
    return prob[idx].copy()


def think_by_profile(params: PolicyParams, env: Environment) -> dict:
    p = think_probability(params, env)
    prof = np.asarray(env.profile_index)
    return {pr.name: float(p[prof == j].mean()) for j, pr in enumerate(env.profiles) if (prof == j).any()}


def stratified(by_profile: dict, order=("easy", "medium", "hard"), gap: float = 0.3) -> Verdict:
    vals = [by_profile[k] for k in order]
    ok = all(a < b for a, b in zip(vals, vals[1:])) and vals[-1] - vals[0] >= gap
    return Verdict(ok, " < ".join(f"{k} {v:.3f}" for k, v in zip(order, vals)))


def crossing_median(steps: Sequence[Optional[int]]) -> float:
    """Median first-crossing step, with "never" counted as +inf."""
    return median(float("inf") if s is None else float(s) for s in steps)
