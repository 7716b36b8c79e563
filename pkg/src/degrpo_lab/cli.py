"""Command-line entry point: ``degrpo-lab <command>``.

Exit codes: 0 success, 1 invalid config or input, 2 runtime abort (NaN), 3 property check failed.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import properties, svg
from .config import PRESETS, RunConfig, load_config, load_preset, with_overrides
from .env import sample_class_ids
from .errors import ConfigError, TrainingAborted
from .objective import Variant
from .policy import ParamLayout, load_params, save_params, warmup_init
from .records import (MalformedMetrics, MetricsWriter, first_crossing, read_metrics, summarize,
                      unique_path, write_json)
from .trainer import run_training

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PROPERTY = 0, 1, 2, 3
HIST_BINS = 20


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _out_root(args, cfg: RunConfig = None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get("DEGRPO_LAB_OUT", "runs"))


def _base_config(args, default_preset: str) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both", field="preset")
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = load_preset(args.preset or default_preset)
    return cfg


def _resolve(args, default_preset: str) -> RunConfig:
    cfg = _base_config(args, default_preset)
    cfg = with_overrides(cfg, seed=args.seed, steps=args.steps, alpha=args.alpha, gamma=args.gamma,
                         epsilon=args.epsilon, beta=args.beta, variant=args.variant)
    cfg.validate()
    return cfg


def _label(cfg: RunConfig, args) -> str:
    if cfg.preset:
        return cfg.preset
    if getattr(args, "config", None):
        return Path(args.config).stem
    return "run"


def execute_run(cfg: RunConfig, run_dir: Path, quiet: bool = False) -> tuple:
    """Train one configuration into a fresh directory; returns (final params, history, summary)."""
    run_dir.mkdir(parents=True, exist_ok=False)
    write_json(run_dir / "config.json", cfg.to_dict())
    env = cfg.build_env()
    init = warmup_init(env, cfg.warmup["p0_short"], cfg.warmup["p0_think"])
    with MetricsWriter(run_dir / "metrics.csv") as mw:
        try:
            params, history = run_training(env, init, cfg.train, on_step=mw.write, dump_dir=run_dir)
        except TrainingAborted as exc:
            write_json(run_dir / "summary.json", {"aborted": True, "step": exc.step, "message": str(exc),
                                                  "dump": exc.dump_path})
            raise
    save_params(params, run_dir / "params.bin")
    obj = cfg.train.objective
    summary = summarize(history)
    summary.update({
        "variant": Variant.parse(obj.variant).value, "alpha": obj.alpha, "beta": obj.beta,
        "epsilon": obj.epsilon, "gamma": cfg.train.reward.gamma, "seed": cfg.train.seed,
        "params": "params.bin", "think_probability_by_profile": properties.think_by_profile(params, env),
    })
    write_json(run_dir / "summary.json", summary)
    if not quiet and history:
        last = history[-1]
        print(f"{run_dir}: think_fraction {last.think_fraction:.3f}  acc_short {_opt(last.acc_short)}  "
              f"acc_think {_opt(last.acc_think)}")
    return params, history, summary


def _opt(v) -> str:
    return "-" if v is None else f"{v:.3f}"


# ---- commands ----

def cmd_train(args) -> int:
    cfg = _resolve(args, "degrpo-ucurve")
    run_dir = unique_path(_out_root(args, cfg) / f"{_label(cfg, args)}-seed{cfg.train.seed}")
    execute_run(cfg, run_dir)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _resolve(args, "vanilla-collapse")
    seeds = args.seeds if args.seeds else [cfg.train.seed]
    root = unique_path(_out_root(args, cfg) / f"compare-{_label(cfg, args)}")
    root.mkdir(parents=True)
    panels = {v: svg.Panel(f"{v.value}: think rollouts", y_range=(0, cfg.train.batch_queries * cfg.train.group_size))
              for v in (Variant.VANILLA_GRPO, Variant.DEGRPO)}
    results = []
    for seed in seeds:
        for variant in (Variant.VANILLA_GRPO, Variant.DEGRPO):
            arm = with_overrides(cfg, seed=seed, variant=variant.value)
            _, hist, _ = execute_run(arm, root / f"{variant.value}-seed{seed}")
            tf = [r.think_fraction for r in hist]
            if variant is Variant.VANILLA_GRPO:
                verdict = properties.collapse(tf)
            else:
                verdict = properties.occupancy(tf)
            results.append({"seed": seed, "variant": variant.value, "passed": verdict.passed,
                            "detail": verdict.detail})
            print(f"seed {seed} {variant.value}: {'PASS' if verdict.passed else 'FAIL'} ({verdict.detail})")
            panels[variant].series.append(svg.Series(f"seed {seed}", [r.step for r in hist],
                                                     [r.n_think for r in hist]))
    (root / "compare.svg").write_text(svg.render(list(panels.values()), "think-mode rollouts per step"))
    ok = _majority(results)
    write_json(root / "compare.json", {"seeds": seeds, "arms": results, "passed": ok})
    return EXIT_OK if ok else EXIT_PROPERTY


def _majority(results) -> bool:
    """Each arm must hold in at least 4 of every 5 seeds (all seeds when fewer than 5)."""
    for variant in {r["variant"] for r in results}:
        arm = [r["passed"] for r in results if r["variant"] == variant]
        need = len(arm) if len(arm) < 5 else math.ceil(0.8 * len(arm))
        if sum(arm) < need:
            return False
    return True


def cmd_sweep_alpha(args) -> int:
    cfg = _resolve(args, "alpha-sweep")
    alphas = args.alphas or cfg.sweep.get("alphas") or [cfg.train.objective.alpha]
    seeds = args.seeds or cfg.sweep.get("seeds") or [cfg.train.seed]
    frac = args.threshold_fraction if args.threshold_fraction is not None else cfg.sweep.get("threshold_fraction", 0.25)
    if any(not (a > 0) for a in alphas):
        raise ConfigError("every alpha must be > 0", field="alphas")
    threshold = frac * cfg.train.batch_queries
    root = unique_path(_out_root(args, cfg) / f"sweep-{_label(cfg, args)}")
    root.mkdir(parents=True)
    rows, crossings = [], {}
    panel = svg.Panel(f"all-correct-short queries (threshold {threshold:g})",
                      y_range=(0, cfg.train.batch_queries))
    for a_i, alpha in enumerate(alphas):
        for seed in seeds:
            run = with_overrides(cfg, seed=seed, alpha=alpha, variant=Variant.DEGRPO.value)
            _, hist, _ = execute_run(run, root / f"alpha{alpha:g}-seed{seed}", quiet=True)
            step = first_crossing([r.all_correct_short for r in hist], threshold)
            crossings.setdefault(alpha, []).append(step)
            rows.append((alpha, seed, "never" if step is None else step))
            print(f"alpha {alpha:g} seed {seed}: first crossing {rows[-1][2]}")
            panel.series.append(svg.Series(f"alpha {alpha:g}",
                                           [r.step for r in hist], [r.all_correct_short for r in hist],
                                           dashed=a_i % 2 == 1))
    with open(root / "sweep.csv", "x", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("alpha", "seed", "first_crossing_step"))
        for alpha, seed, step in rows:
            w.writerow((repr(float(alpha)), seed, step))
    _recolor_by_alpha(panel, alphas)
    (root / "sweep.svg").write_text(svg.render([panel], "alpha sweep"))
    medians = {repr(float(a)): properties.crossing_median(s) for a, s in crossings.items()}
    ok = True
    if len(alphas) >= 2:
        hi, lo = max(alphas), min(alphas)
        ok = properties.crossing_median(crossings[hi]) < properties.crossing_median(crossings[lo])
        print(f"median crossing alpha {hi:g}: {_med(crossings[hi])}, alpha {lo:g}: {_med(crossings[lo])} "
              f"-> {'PASS' if ok else 'FAIL'}")
    write_json(root / "sweep.json", {"threshold": threshold, "medians": {k: (None if math.isinf(v) else v)
                                                                         for k, v in medians.items()},
                                     "passed": ok})
    return EXIT_OK if ok else EXIT_PROPERTY


def _med(steps) -> str:
    m = properties.crossing_median(steps)
    return "never" if math.isinf(m) else f"{m:g}"


def _recolor_by_alpha(panel: svg.Panel, alphas) -> None:
    # one colour per alpha: svg assigns colours by series index, so group series by label
    order = {f"alpha {a:g}": i for i, a in enumerate(alphas)}
    panel.series.sort(key=lambda s: order[s.label])
    panel.colors = [svg.PALETTE[order[s.label] % len(svg.PALETTE)] for s in panel.series]


def cmd_policy_histogram(args) -> int:
    params_path = Path(args.params)
    if args.config or args.preset:
        cfg = _base_config(args, "degrpo-ucurve")
    elif (params_path.parent / "config.json").exists():
        cfg = load_config(params_path.parent / "config.json")
    else:
        cfg = load_preset("degrpo-ucurve")
    env = cfg.build_env()
    try:
        params = load_params(params_path, expect=ParamLayout.for_env(env))
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise CliError(f"{params_path}: cannot read params ({exc})") from None
    p_class = properties.think_probability(params, env)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    cls = sample_class_ids(env, rng, args.samples)
    p = p_class[cls]
    counts = np.bincount(np.minimum((p * HIST_BINS).astype(int), HIST_BINS - 1), minlength=HIST_BINS)
    prof = np.asarray(env.profile_index)[cls]
    means = {pr.name: float(p[prof == j].mean()) for j, pr in enumerate(env.profiles) if (prof == j).any()}
    out = Path(args.out) if args.out else params_path.parent
    out.mkdir(parents=True, exist_ok=True)
    csv_path = unique_path(out / "histogram.csv")
    with open(csv_path, "x", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("bin_lo", "bin_hi", "count"))
        for b in range(HIST_BINS):
            w.writerow((repr(b / HIST_BINS), repr((b + 1) / HIST_BINS), int(counts[b])))
    panel = svg.Panel("P(think | query)", x_label="P(think)", kind="bar",
                      series=[svg.Series("queries", [b / HIST_BINS for b in range(HIST_BINS)], counts.tolist())])
    unique_path(out / "histogram.svg").write_text(svg.render([panel], f"{args.samples} sampled queries"))
    for name, m in means.items():
        print(f"mean P(think | {name}) = {m:.4f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    series = []
    for i, path in enumerate(args.metrics):
        try:
            rows = read_metrics(path)
        except MalformedMetrics as exc:
            raise CliError(str(exc)) from None
        except OSError as exc:
            raise CliError(f"{path}: {exc.strerror}") from None
        label = args.labels[i] if args.labels and i < len(args.labels) else f"run {i + 1}"
        series.append((label, rows))
    two = len(series) > 1
    think = svg.Panel("think fraction", y_range=(0, 1))
    acc = svg.Panel("accuracy by mode", y_range=(0, 1))
    allc = svg.Panel("all-correct-short queries")
    for label, rows in series:
        steps = [r["step"] for r in rows]
        think.series.append(svg.Series(label, steps, [r["think_fraction"] for r in rows]))
        acc.series.append(svg.Series(f"{label} short" if two else "short", steps, [r["acc_short"] for r in rows]))
        acc.series.append(svg.Series(f"{label} think" if two else "think", steps, [r["acc_think"] for r in rows],
                                     dashed=True))
        allc.series.append(svg.Series(label, steps, [r["all_correct_short"] for r in rows]))
    out = Path(args.out) if args.out else Path(args.metrics[0]).with_name("metrics.svg")
    if out.exists():
        out = unique_path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg.render([think, acc, allc]))
    print(out)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    ok = True
    from .gradcheck import check_all
    for (variant, beta), rep in check_all(seed=seed, n_coords=args.coords).items():
        ok &= rep.passed
        print(f"{variant:8s} beta={beta:g}: {rep.coordinates_checked} coords, max rel err "
              f"{rep.max_rel_error:.2e} at {rep.worst_coordinate} -> {'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_PROPERTY


# ---- parser ----

def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--out", help="output root (default $DEGRPO_LAB_OUT or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="degrpo-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    _run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="vanilla GRPO vs DeGRPO on matched seeds")
    _run_flags(p)
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep-alpha", help="first step where all-correct-short queries pass a threshold")
    _run_flags(p)
    p.add_argument("--alphas", type=float, nargs="+")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--threshold-fraction", type=float, help="threshold as a fraction of batch_queries")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("policy-histogram", help="histogram of P(think | query) for saved params")
    p.add_argument("params")
    p.add_argument("--config")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_policy_histogram)

    p = sub.add_parser("plot", help="render metrics.csv files as SVG")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--labels", nargs="+")
    p.add_argument("--out", help="output SVG path")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("grad-check", help="finite-difference check of both objectives")
    p.add_argument("--seed", type=int)
    p.add_argument("--coords", type=int, default=64)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileExistsError as exc:
        print(f"error: refusing to overwrite {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
