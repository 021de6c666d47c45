"""Training runs and evaluation sweeps driven by an ExperimentConfig."""

from __future__ import annotations

import dataclasses
import hashlib
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..adaptive import ExecPolicy, StopPolicy, calibrate_delta
from ..errors import IntegrityError
from ..model import RDPolicy
from ..sim.demos import collect_demos, export_demos_csv, load_demos, save_demos
from ..sim.env import reset, step
from ..sim.expert import scripted_expert
from ..sim.rollout import rollout
from ..trainer import Trainer
from .checkpoint import capture, encode, load_checkpoint, restore, save_checkpoint
from .config import ExperimentConfig, config_from_dict
from .metrics import MetricsWriter, write_summary

STRATEGIES = ("fixed", "pure_kl", "binary", "linear_decay")
CALIBRATION_SEED_START = 50_000


def build_policy(cfg: ExperimentConfig):
    T.set_default_dtype(np.float32 if cfg.dtype == "float32" else np.float64)
    return RDPolicy(cfg.encoder, cfg.head, seed=cfg.model_seed)


def get_demos(cfg: ExperimentConfig):
    sim = cfg.sim
    path = sim.demo_cache
    if path and os.path.exists(path):
        demos = load_demos(path)
        if demos and demos[0].target_chunk.shape[0] != cfg.head.horizon:
            raise IntegrityError(f"{path}: cached demos have horizon {demos[0].target_chunk.shape[0]}, config wants {cfg.head.horizon}")
        return demos
    demos = collect_demos(sim.tiers, sim.episodes_per_tier, cfg.head.horizon, seed=sim.demo_seed, noise=sim.demo_noise)
    if path:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        save_demos(path, demos)
        export_demos_csv(os.path.splitext(path)[0] + ".csv", demos)
    return demos


def make_trainer(cfg, policy, demos):
    return Trainer(policy, demos, cfg.train, cfg.sampler.build())


def run_training(cfg: ExperimentConfig, out_dir, run_id="train", log=None):
    """Train per the config; writes train.csv, checkpoints and summary.json."""
    os.makedirs(out_dir, exist_ok=True)
    policy = build_policy(cfg)
    demos = get_demos(cfg)
    trainer = make_trainer(cfg, policy, demos)
    snapshot = cfg.to_dict()
    t0 = time.perf_counter()
    every = cfg.train.checkpoint_every
    with MetricsWriter(os.path.join(out_dir, "train.csv"), run_id) as mw:

        def on_step(tr, loss, n):
            # training rows carry the unrolled depth N in the k_star column
            mw.write(step=tr.step, loss=loss, k_star=n, wall_time=time.perf_counter() - t0)
            if log and tr.step % 100 == 0:
                log(f"step {tr.step} loss {loss:.5f}")
            if every and tr.step % every == 0 and tr.step < cfg.train.steps:
                save_checkpoint(os.path.join(out_dir, f"step{tr.step:07d}.ckpt"), tr.policy, tr, snapshot)

        report = trainer.run(callback=on_step)
    final = os.path.join(out_dir, "final.ckpt")
    data = save_checkpoint(final, policy, trainer, snapshot)
    tail = report.losses[-50:]
    summary = {
        "run_id": run_id,
        "steps": report.final_step,
        "demos": len(demos),
        "final_loss_mean50": float(np.mean(tail)) if tail else None,
        "wall_time": report.wall_time,
        "mean_depth": float(np.mean(report.depths)) if report.depths else None,
        "checkpoint": final,
        "checkpoint_sha256": hashlib.sha256(data).hexdigest(),
    }
    write_summary(os.path.join(out_dir, "summary.json"), summary)
    return policy, trainer, summary


def load_run(path):
    """Checkpoint -> (config, policy) ready for evaluation."""
    ckpt = load_checkpoint(path)
    cfg = config_from_dict(ckpt.config)
    policy = build_policy(cfg)
    restore(ckpt, policy)
    return cfg, policy, ckpt


@dataclass
class CellResult:
    strategy: str
    delta: float | None
    r: int | None
    success: float
    mean_k: float
    std_k: float
    mean_h: float
    episodes: int
    decisions: int
    exit_counts: dict = field(default_factory=dict)
    per_tier: dict = field(default_factory=dict)

    def row(self):
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in ("exit_counts", "per_tier")}


def _evaluate_cell(policy, cfg, stop, exec_policy, tiers, seeds, label, mw=None):
    outs = []
    for tier in tiers:
        for seed in seeds:
            o = rollout(policy, stop, exec_policy, tier, seed, cap=cfg.sim.cap(tier))
            outs.append(o)
            if mw is not None:
                ks = o.k_stars
                hs = [d.exec_horizon for d in o.decisions]
                mw.write(step=o.steps_used, tier=tier, seed=seed, success=o.success,
                         k_star=float(np.mean(ks)), exec_horizon=float(np.mean(hs)), cell=label)
    ks = np.array([k for o in outs for k in o.k_stars], dtype=np.float64)
    hs = np.array([d.exec_horizon for o in outs for d in o.decisions], dtype=np.float64)
    counts = {}
    for k in ks.astype(int):
        counts[int(k)] = counts.get(int(k), 0) + 1
    per_tier = {int(t): float(np.mean([o.success for o in outs if o.tier == t])) for t in tiers}
    return outs, ks, hs, dict(sorted(counts.items())), per_tier


def sweep_depth(policy, cfg, depths, tiers, seeds, mw=None, warn=None):
    """Fixed-depth rows: {"r", "tier", "success", "mean_steps"}; skipped rows carry success None."""
    rows = []
    for r in depths:
        if r < 1 or r > cfg.head.max_iters:
            msg = f"depth {r} outside [1, {cfg.head.max_iters}]; skipped"
            if warn:
                warn(msg)
            rows.append({"r": r, "tier": None, "success": None, "mean_steps": None, "note": msg})
            continue
        stop = StopPolicy(kind="fixed", fixed_r=r)
        for tier in tiers:
            outs = []
            for seed in seeds:
                o = rollout(policy, stop, ExecPolicy(), tier, seed, cap=cfg.sim.cap(tier))
                outs.append(o)
                if mw is not None:
                    mw.write(step=o.steps_used, tier=tier, seed=seed, success=o.success, k_star=r,
                             exec_horizon=cfg.head.horizon, cell=f"fixed_r{r}")
            rows.append({"r": r, "tier": tier, "success": float(np.mean([o.success for o in outs])),
                         "mean_steps": float(np.mean([o.steps_used for o in outs])), "note": ""})
    return rows


def cell_policies(strategy, delta, cfg):
    base_stop, base_exec = cfg.stop, cfg.exec
    if strategy == "fixed":
        return StopPolicy(kind="fixed", fixed_r=base_stop.fixed_r), ExecPolicy()
    stop = dataclasses.replace(base_stop, kind="pure_kl", delta=float(delta))
    kind = "full" if strategy == "pure_kl" else strategy
    return stop, dataclasses.replace(base_exec, kind=kind)


def sweep_adaptive(policy, cfg, strategies, deltas, tiers, seeds, mw=None):
    """One CellResult per (strategy, delta); the fixed control ignores delta."""
    cells = []
    for strategy in strategies:
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
        grid = [None] if strategy == "fixed" else list(deltas)
        for delta in grid:
            stop, ex = cell_policies(strategy, delta, cfg)
            label = strategy if delta is None else f"{strategy}_d{delta:g}"
            outs, ks, hs, counts, per_tier = _evaluate_cell(policy, cfg, stop, ex, tiers, seeds, label, mw)
            cells.append(CellResult(
                strategy, delta, stop.fixed_r if strategy == "fixed" else None,
                float(np.mean([o.success for o in outs])),
                float(ks.mean()), float(ks.std()), float(hs.mean()),
                len(outs), len(ks), counts, per_tier,
            ))
    return cells


def calibration_contexts(policy, cfg, n_episodes=20, stride=3, seed_start=CALIBRATION_SEED_START):
    """Contexts from expert-visited states on seeds disjoint from demos and evaluation."""
    contexts = []
    with T.no_grad():
        for tier in cfg.sim.tiers:
            for seed in range(seed_start, seed_start + n_episodes):
                s = reset(tier, seed, cap=cfg.sim.cap(tier))
                while True:
                    if s.step_count % stride == 0:
                        contexts.append(policy.observe(s.observation(), s.proprio))
                    if s.done():
                        break
                    s = step(s, scripted_expert(s))
    return contexts


def calibrate(policy, cfg, target_mean_iters, rng_seed=0, **kw):
    contexts = calibration_contexts(policy, cfg, **kw)
    seeds = np.random.default_rng(rng_seed).integers(0, 2**31, size=len(contexts))
    return calibrate_delta(policy.head, contexts, target_mean_iters, cfg.stop, seeds=seeds)


def checkpoint_hash(ckpt):
    return hashlib.sha256(encode(ckpt)).hexdigest()


def eprint(msg):
    print(msg, file=sys.stderr, flush=True)


__all__ = [
    "build_policy", "get_demos", "make_trainer", "run_training", "load_run", "sweep_depth", "sweep_adaptive",
    "calibrate", "calibration_contexts", "cell_policies", "CellResult", "capture", "checkpoint_hash", "STRATEGIES",
]
