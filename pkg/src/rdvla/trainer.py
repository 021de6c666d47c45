"""Randomized-depth imitation training with truncated backprop through time."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, TrainingDivergedError
from .head import ActionChunk, RecurrentDepthHead, ScratchpadState
from .sim.demos import group_by_entities

DEPTH_SHIFT = 0.125


@dataclass
class DepthSampler:
    """Log-normal Poisson recurrence counts: ``Poisson(exp(tau)) + 1``."""

    mu_rec: float = 8.0
    sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.mu_rec <= 0:
            raise ConfigError(f"sampler.mu_rec: must be > 0, got {self.mu_rec}")
        if self.sigma < 0:
            raise ConfigError(f"sampler.sigma: must be >= 0, got {self.sigma}")
        self.rng = np.random.default_rng(self.seed)

    @property
    def log_mean(self):
        return math.log(self.mu_rec) - DEPTH_SHIFT

    def sample(self, rng=None):
        return sample_depth(self, self.rng if rng is None else rng)

    def sample_many(self, n, rng=None):
        rng = self.rng if rng is None else rng
        tau = rng.normal(self.log_mean, self.sigma, size=n)
        return rng.poisson(np.exp(tau)) + 1


def sample_depth(sampler: DepthSampler, rng):
    tau = rng.normal(sampler.log_mean, sampler.sigma)
    return int(rng.poisson(math.exp(tau))) + 1


@dataclass
class TrainConfig:
    tbptt_window: int = 4
    batch_size: int = 64
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    steps: int = 1000
    grad_clip_norm: float = 1.0
    seed: int = 0
    warmup_steps: int = 0
    lr_schedule: str = "constant"  # or "cosine"
    min_lr_ratio: float = 0.1
    checkpoint_every: int = 0

    def validate(self):
        errors = []
        if self.tbptt_window < 1:
            errors.append("train.tbptt_window: must be >= 1")
        if self.batch_size < 1:
            errors.append("train.batch_size: must be >= 1")
        if self.learning_rate < 0:
            errors.append("train.learning_rate: must be >= 0")
        if self.steps < 0:
            errors.append("train.steps: must be >= 0")
        if self.grad_clip_norm <= 0:
            errors.append("train.grad_clip_norm: must be > 0")
        if self.lr_schedule not in ("constant", "cosine"):
            errors.append(f"train.lr_schedule: unknown schedule {self.lr_schedule!r}")
        return errors

    def lr_at(self, step):
        lr = self.learning_rate
        if self.warmup_steps and step < self.warmup_steps:
            return lr * (step + 1) / self.warmup_steps
        if self.lr_schedule == "cosine" and self.steps > self.warmup_steps:
            frac = (step - self.warmup_steps) / max(1, self.steps - self.warmup_steps)
            frac = min(1.0, frac)
            return lr * (self.min_lr_ratio + (1 - self.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac)))
        return lr


def tbptt_forward(head: RecurrentDepthHead, ctx, n, d, rng):
    """Unroll ``n`` core steps; only the last ``min(n, d)`` record gradients.

    The prefix runs without a graph and the scratchpad is detached after it,
    so S_pre and the context receive gradient only through the window.
    """
    if n < 1 or d < 1:
        raise ValueError(f"tbptt_forward needs n >= 1 and d >= 1, got n={n}, d={d}")
    state = head.start(ctx, rng)
    prefix = max(0, n - d)
    if prefix:
        with T.no_grad():
            for _ in range(prefix):
                state = head.core_step(state, ctx)
        state = ScratchpadState(T.detach(state.s), state.s_pre, state.iter)
    for _ in range(min(n, d)):
        state = head.core_step(state, ctx)
    return head.coda(state, ctx)


def chunk_loss(pred, target):
    """Mean squared error over every chunk entry."""
    actions = pred.actions if isinstance(pred, ActionChunk) else pred
    target = T.as_tensor(target)
    if actions.shape != target.shape:
        raise DimensionError(f"chunk_loss: prediction {actions.shape} vs target {target.shape}")
    return T.mse(actions, target)


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class AdamW:
    """Adam with decoupled weight decay applied to matrix-shaped parameters."""

    def __init__(self, named_params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if lr == 0.0:
                continue
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and p.data.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update

    def state_dict(self):
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()}, "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state["m"][k], dtype=self.m[k].dtype)
            self.v[k] = np.array(state["v"][k], dtype=self.v[k].dtype)


@dataclass
class TrainingReport:
    losses: list = field(default_factory=list)
    depths: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    wall_time: float = 0.0
    final_step: int = 0


class Trainer:
    """Owns the policy, optimizer and RNG streams so a run can be resumed."""

    def __init__(self, policy, dataset, cfg: TrainConfig, sampler: DepthSampler):
        errors = cfg.validate()
        if errors:
            raise ConfigError("; ".join(errors))
        if not dataset:
            raise ValueError("training dataset is empty")
        self.policy = policy
        self.cfg = cfg
        self.sampler = sampler
        self.groups = group_by_entities(dataset) if isinstance(dataset, list) else dataset
        self.group_keys = list(self.groups)
        sizes = np.array([len(self.groups[k]) for k in self.group_keys], dtype=np.float64)
        self.group_probs = sizes / sizes.sum()
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EA1]))
        self.opt = AdamW(policy.named_parameters(), cfg.learning_rate, weight_decay=cfg.weight_decay)
        self.step = 0

    def train_step(self):
        cfg, rng = self.cfg, self.rng
        key = self.group_keys[rng.choice(len(self.group_keys), p=self.group_probs)]
        group = self.groups[key]
        idx = rng.choice(len(group), size=min(cfg.batch_size, len(group)), replace=False)
        types, feats, proprio, targets = group.take(np.sort(idx))
        n = min(self.sampler.sample(), self.policy.head.cfg.max_iters)

        self.policy.zero_grad()
        ctx = self.policy.context(types, feats, proprio)
        chunk = tbptt_forward(self.policy.head, ctx, n, cfg.tbptt_window, rng)
        loss = chunk_loss(chunk, targets)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss {value} at step {self.step}", self.step)
        T.backward(loss)
        params = self.policy.parameters()
        gnorm = clip_grad_norm(params, cfg.grad_clip_norm)
        self.opt.step(cfg.lr_at(self.step))
        self.step += 1
        return value, n, gnorm

    def run(self, until=None, callback=None):
        until = self.cfg.steps if until is None else until
        report = TrainingReport()
        t0 = time.perf_counter()
        while self.step < until:
            loss, n, gnorm = self.train_step()
            report.losses.append(loss)
            report.depths.append(n)
            report.grad_norms.append(gnorm)
            if callback is not None:
                callback(self, loss, n)
        report.wall_time = time.perf_counter() - t0
        report.final_step = self.step
        return report

    def state_dict(self):
        return {
            "step": self.step,
            "optimizer": self.opt.state_dict(),
            "rng": self.rng.bit_generator.state,
            "sampler_rng": self.sampler.rng.bit_generator.state,
        }

    def load_state_dict(self, state):
        self.step = int(state["step"])
        self.opt.load_state_dict(state["optimizer"])
        self.rng.bit_generator.state = state["rng"]
        self.sampler.rng.bit_generator.state = state["sampler_rng"]


def train(dataset, cfg: TrainConfig, sampler: DepthSampler, policy, callback=None):
    trainer = Trainer(policy, dataset, cfg, sampler)
    report = trainer.run(callback=callback)
    return report, trainer
