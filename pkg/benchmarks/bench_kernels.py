"""Time the compiled kernels against the numpy fallback on a training-sized batch.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from degrpo_lab.config import load_preset
from degrpo_lab.kernels import _fallback
from degrpo_lab.policy import PolicyParams, policy_tables, warmup_init
from degrpo_lab.trainer import rollout_step, step_rng

try:
    from degrpo_lab.kernels import _core
except ImportError:
    _core = None


def setup():
    cfg = load_preset("degrpo-ucurve")
    env = cfg.build_env()
    params = warmup_init(env, cfg.warmup["p0_short"], cfg.warmup["p0_think"])
    batch = rollout_step(env, params, cfg.train, step_rng(0, 0))
    rng = np.random.default_rng(1)
    live = PolicyParams(params.layout, params.theta + 0.05 * rng.standard_normal(params.layout.size))
    return env, cfg, params, live, batch


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    env, cfg, old, live, batch = setup()
    lay = old.layout
    n = batch.size
    t_old, t_live = policy_tables(old), policy_tables(live)
    offsets, fid, old_lp = batch.flat_tokens()
    cls = batch.cls.astype(np.int64)
    u = np.random.default_rng(2).random((n, lay.t_think + 1))
    w = np.full(n, 1.0 / 51)
    adv = batch.advantage

    def sample(mod):
        return lambda: mod.sample_tokens(cls, u, t_old.cdf, t_old.logp, lay.num_classes, lay.answer_vocab,
                                         lay.scratch_vocab, lay.t_short, lay.t_think)

    def surr(mod):
        return lambda: mod.surrogate(offsets, fid, old_lp, adv, w, w, w, t_live.logp, t_old.logp,
                                     0.2, 1e-3, 1.0 / n, lay.size)

    backends = [("python", _fallback)] + ([("cython", _core)] if _core is not None else [])
    print(f"batch: {n} rollouts, {len(fid)} tokens, theta size {lay.size}")
    results = {}
    for kernel, make in (("sample_tokens", sample), ("surrogate", surr)):
        for name, mod in backends:
            t = min(timeit.repeat(make(mod), number=1, repeat=args.repeat))
            results[(kernel, name)] = t
            print(f"{kernel:14s} {name:7s} {t * 1e3:9.3f} ms")
        if _core is not None:
            print(f"{kernel:14s} speedup {results[(kernel, 'python')] / results[(kernel, 'cython')]:8.1f}x")
    if _core is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
