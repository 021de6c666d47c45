"""Command-line entry point: ``rdvla <subcommand> [flags]``.

Exit codes: 0 success, 2 config error, 3 runtime or NaN error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from ..errors import BudgetError, CalibrationError, ConfigError, TrainingDivergedError
from .config import ExperimentConfig, load_config
from .metrics import MetricsWriter, write_summary

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4


def _int_list(text):
    text = text.strip()
    if not text:
        return []
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    text = text.strip()
    if not text:
        return []
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _str_list(text):
    return [x for x in text.replace(" ", "").split(",") if x]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    p = _Parser(prog="rdvla", description="Recurrent-depth action head: training and evaluation sweeps.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, need_ckpt):
        sp.add_argument("--config", help="YAML experiment config")
        if need_ckpt:
            sp.add_argument("--checkpoint", required=True, help="checkpoint written by `train`")
        sp.add_argument("--seed", type=int, default=None, help="seed override")
        sp.add_argument("--out", default=None, help="output directory")

    t = sub.add_parser("train", help="collect demos and train a policy")
    common(t, need_ckpt=False)
    t.add_argument("--steps", type=int, default=None, help="override train.steps")
    t.add_argument("--checkpoint", default=None, help="resume from this checkpoint")

    sd = sub.add_parser("sweep-depth", help="fixed-depth success table")
    common(sd, need_ckpt=True)
    sd.add_argument("--depths", type=_int_list, default=[1, 2, 4, 8, 16])
    sd.add_argument("--tiers", type=_int_list, default=None)
    sd.add_argument("--episodes", type=int, default=None)

    sa = sub.add_parser("sweep-adaptive", help="adaptive strategy by threshold cells")
    common(sa, need_ckpt=True)
    sa.add_argument("--strategy", type=_str_list, default=["fixed", "pure_kl", "binary", "linear_decay"])
    sa.add_argument("--delta", type=_float_list, default=[1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2])
    sa.add_argument("--tiers", type=_int_list, default=None)
    sa.add_argument("--episodes", type=int, default=None)

    ro = sub.add_parser("rollout", help="run and report single episodes")
    common(ro, need_ckpt=True)
    ro.add_argument("--tiers", type=_int_list, default=None)
    ro.add_argument("--strategy", type=_str_list, default=["pure_kl"])
    ro.add_argument("--delta", type=_float_list, default=None)
    ro.add_argument("--episodes", type=int, default=1)

    sr = sub.add_parser("sample-recurrence", help="depth-sampler statistics")
    common(sr, need_ckpt=False)
    sr.add_argument("--n", type=int, default=100_000)

    cd = sub.add_parser("calibrate-delta", help="find a threshold hitting a target mean depth")
    common(cd, need_ckpt=True)
    cd.add_argument("--target", type=float, default=None, help="target mean k* (default 0.7 * stop.fixed_r)")
    return p


def _eval_config(args):
    """Checkpoint config, with stop/exec/sim taken from --config when given."""
    from .experiments import load_run

    cfg, policy, ckpt = load_run(args.checkpoint)
    if args.config:
        over = load_config(args.config)
        cfg = dataclasses.replace(cfg, stop=over.stop, exec=over.exec, sim=over.sim)
        cfg.check()
    return cfg, policy, ckpt


def _seeds(cfg, args):
    start = cfg.sim.eval_seed_start if args.seed is None else args.seed
    n = cfg.sim.eval_episodes if getattr(args, "episodes", None) is None else args.episodes
    return list(range(start, start + n))


def _tiers(cfg, args):
    tiers = cfg.sim.tiers if args.tiers is None else args.tiers
    bad = [t for t in tiers if t not in (0, 1, 2)]
    if bad:
        raise ConfigError(f"--tiers: unknown tier(s) {bad}")
    return tiers


def _write_table(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})


def cmd_train(args):
    from .checkpoint import load_checkpoint, restore, save_checkpoint
    from .experiments import build_policy, get_demos, make_trainer, run_training

    if not args.config:
        raise ConfigError("train: --config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, model_seed=args.seed,
            train=dataclasses.replace(cfg.train, seed=args.seed),
            sampler=dataclasses.replace(cfg.sampler, seed=args.seed),
        )
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, steps=args.steps))
    cfg.check()
    out = args.out or cfg.out_dir
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        os.makedirs(out, exist_ok=True)
        policy = build_policy(cfg)
        trainer = make_trainer(cfg, policy, get_demos(cfg))
        restore(ckpt, policy, trainer)
        with MetricsWriter(os.path.join(out, "train.csv"), "resume") as mw:
            trainer.run(callback=lambda tr, loss, n: mw.write(step=tr.step, loss=loss, k_star=n))
        save_checkpoint(os.path.join(out, "final.ckpt"), policy, trainer, cfg.to_dict())
        print(f"resumed from step {ckpt.step} to {trainer.step}; wrote {out}/final.ckpt")
        return EXIT_OK
    _, _, summary = run_training(cfg, out, log=lambda m: print(m, flush=True))
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_sweep_depth(args):
    from .experiments import sweep_depth

    cfg, policy, _ = _eval_config(args)
    tiers, seeds = _tiers(cfg, args), _seeds(cfg, args)
    out = args.out or os.path.join(cfg.out_dir, "sweep_depth")
    os.makedirs(out, exist_ok=True)
    with MetricsWriter(os.path.join(out, "episodes.csv"), "sweep-depth", extra_columns=("cell",)) as mw:
        rows = sweep_depth(policy, cfg, args.depths, tiers, seeds, mw=mw, warn=lambda m: print("warning:", m, file=sys.stderr))
    _write_table(os.path.join(out, "table.csv"), rows, ["r", "tier", "success", "mean_steps", "note"])
    write_summary(os.path.join(out, "summary.json"), {"depths": args.depths, "tiers": tiers, "seeds": [seeds[0], seeds[-1]] if seeds else [], "rows": rows})
    print(f"{'r':>4} {'tier':>4} {'success':>8} {'steps':>7}")
    for r in rows:
        if r["success"] is None:
            print(f"{r['r']:>4}    -  skipped")
        else:
            print(f"{r['r']:>4} {r['tier']:>4} {r['success']:>8.3f} {r['mean_steps']:>7.1f}")
    return EXIT_OK


def cmd_sweep_adaptive(args):
    from .experiments import STRATEGIES, sweep_adaptive

    bad = [s for s in args.strategy if s not in STRATEGIES]
    if bad:
        raise ConfigError(f"--strategy: unknown {bad}; choose from {list(STRATEGIES)}")
    if any(not d > 0 for d in args.delta):
        raise ConfigError("--delta: thresholds must be > 0")
    cfg, policy, _ = _eval_config(args)
    tiers, seeds = _tiers(cfg, args), _seeds(cfg, args)
    out = args.out or os.path.join(cfg.out_dir, "sweep_adaptive")
    os.makedirs(out, exist_ok=True)
    with MetricsWriter(os.path.join(out, "episodes.csv"), "sweep-adaptive", extra_columns=("cell",)) as mw:
        cells = sweep_adaptive(policy, cfg, args.strategy, args.delta, tiers, seeds, mw=mw)
    cols = ["strategy", "delta", "r", "success", "mean_k", "std_k", "mean_h", "episodes", "decisions"]
    _write_table(os.path.join(out, "table.csv"), [c.row() for c in cells], cols)
    with open(os.path.join(out, "exit_hist.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "delta", "k_star", "count"])
        for c in cells:
            for k, n in c.exit_counts.items():
                w.writerow([c.strategy, "" if c.delta is None else c.delta, k, n])
    write_summary(os.path.join(out, "summary.json"), {"cells": [dataclasses.asdict(c) for c in cells]})
    print(f"{'strategy':<13} {'delta':>8} {'success':>8} {'mean_k':>7} {'std_k':>6} {'mean_h':>6}")
    for c in cells:
        d = "-" if c.delta is None else f"{c.delta:g}"
        print(f"{c.strategy:<13} {d:>8} {c.success:>8.3f} {c.mean_k:>7.2f} {c.std_k:>6.2f} {c.mean_h:>6.2f}")
    return EXIT_OK


def cmd_rollout(args):
    from ..sim.rollout import rollout
    from .experiments import STRATEGIES, cell_policies

    if len(args.strategy) != 1 or args.strategy[0] not in STRATEGIES:
        raise ConfigError(f"--strategy: give exactly one of {list(STRATEGIES)}")
    cfg, policy, _ = _eval_config(args)
    delta = cfg.stop.delta if not args.delta else args.delta[0]
    stop, ex = cell_policies(args.strategy[0], delta, cfg)
    tiers, seeds = _tiers(cfg, args), _seeds(cfg, args)
    out = args.out
    mw = None
    if out:
        os.makedirs(out, exist_ok=True)
        mw = MetricsWriter(os.path.join(out, "decisions.csv"), "rollout", extra_columns=("cell",))
    try:
        for tier in tiers:
            for seed in seeds:
                o = rollout(policy, stop, ex, tier, seed, cap=cfg.sim.cap(tier))
                print(f"tier {tier} seed {seed}: success={o.success} steps={o.steps_used} decisions={len(o.decisions)} "
                      f"mean_k={np.mean(o.k_stars):.2f}")
                for d in o.decisions:
                    if mw is not None:
                        mw.write(step=d.step, tier=tier, seed=seed, success=o.success, k_star=d.k_star,
                                 exec_horizon=d.exec_horizon, cell=args.strategy[0])
    finally:
        if mw is not None:
            mw.close()
    return EXIT_OK


def cmd_sample_recurrence(args):
    from .config import SamplerConfig

    sampler_cfg = load_config(args.config).sampler if args.config else SamplerConfig()
    if args.seed is not None:
        sampler_cfg = dataclasses.replace(sampler_cfg, seed=args.seed)
    if args.n < 1:
        raise ConfigError("--n: must be >= 1")
    draws = sampler_cfg.build().sample_many(args.n).astype(np.float64)
    centered = draws - draws.mean()
    sd = draws.std()
    skew = float((centered**3).mean() / sd**3) if sd > 0 else 0.0
    stats = {
        "n": args.n, "mu_rec": sampler_cfg.mu_rec, "sigma": sampler_cfg.sigma, "seed": sampler_cfg.seed,
        "expected_mean": sampler_cfg.mu_rec * float(np.exp(-0.125 + sampler_cfg.sigma**2 / 2)) + 1,
        "mean": float(draws.mean()), "std": float(sd), "min": int(draws.min()), "max": int(draws.max()),
        "skew": skew, "quantiles": {q: float(np.quantile(draws, q)) for q in (0.05, 0.25, 0.5, 0.75, 0.95)},
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_summary(os.path.join(args.out, "sampler.json"), stats)
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_calibrate_delta(args):
    from .experiments import calibrate

    cfg, policy, _ = _eval_config(args)
    target = 0.7 * cfg.stop.fixed_r if args.target is None else args.target
    cal = calibrate(policy, cfg, target, rng_seed=0 if args.seed is None else args.seed)
    result = {"target_mean_iters": target, "delta": cal.delta, "mean_iters": cal.mean_iters, "evaluations": cal.evaluations}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_summary(os.path.join(args.out, "calibration.json"), result)
    print(json.dumps(result, indent=2))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sweep-depth": cmd_sweep_depth,
    "sweep-adaptive": cmd_sweep_adaptive,
    "rollout": cmd_rollout,
    "sample-recurrence": cmd_sample_recurrence,
    "calibrate-delta": cmd_calibrate_delta,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, BudgetError, CalibrationError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RuntimeError, ValueError, KeyError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
