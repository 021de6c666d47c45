"""Recurrent-depth action head: Prelude, weight-tied core, Coda.

Shapes are written unbatched (``[K, D]``); every function also accepts a
leading batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import ContextBundle
from .errors import BudgetError, ConfigError
from .nn import CrossBlock, Linear, Module, RMSNorm, param


@dataclass
class HeadConfig:
    k_queries: int = 8
    d_model: int = 64
    heads: int = 4
    max_iters: int = 64
    gamma_init: float = 1.0
    sigma_init: float | None = None  # None -> d_model ** -0.5
    trunc: float = 3.0
    action_dim: int = 3
    horizon: int = 8
    core_blocks: int = 1
    prelude_gate_init: float = 1.0
    core_gate_init: float = 0.0
    coda_gate_init: float = 1.0

    @property
    def init_std(self):
        sigma = self.d_model**-0.5 if self.sigma_init is None else self.sigma_init
        return self.gamma_init * sigma

    def validate(self):
        errors = []
        if self.k_queries < 1:
            errors.append("head.k_queries: must be >= 1")
        if self.max_iters < 1:
            errors.append("head.max_iters: must be >= 1")
        if not self.trunc > 0:
            errors.append("head.trunc: must be > 0")
        if self.k_queries != self.horizon:
            errors.append(f"head.horizon: chunk decode maps one scratchpad row per step, so k_queries ({self.k_queries}) must equal horizon ({self.horizon})")
        if self.heads < 1 or self.d_model % self.heads:
            errors.append(f"head.d_model: {self.d_model} is not divisible by heads={self.heads}")
        if self.core_blocks < 1:
            errors.append("head.core_blocks: must be >= 1")
        return errors

    def check(self):
        errors = self.validate()
        if errors:
            raise ConfigError("; ".join(errors))


@dataclass
class ScratchpadState:
    s: T.Tensor
    s_pre: T.Tensor
    iter: int = 0


@dataclass
class ActionChunk:
    actions: T.Tensor  # [H, action_dim]
    produced_at_iter: int

    def numpy(self):
        return self.actions.data


def init_scratchpad(cfg: HeadConfig, rng, batch=None):
    """Truncated-normal noise with std ``gamma_init * sigma_init``.

    Draws outside ``+-trunc`` standard deviations are resampled.
    """
    shape = (cfg.k_queries, cfg.d_model) if batch is None else (batch, cfg.k_queries, cfg.d_model)
    std = cfg.init_std
    z = rng.standard_normal(shape)
    bad = np.abs(z) > cfg.trunc
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > cfg.trunc
    return T.Tensor((z * std).astype(T.get_default_dtype()))


class RecurrentDepthHead(Module):
    def __init__(self, cfg: HeadConfig, rng):
        cfg.check()
        self.cfg = cfg
        d = cfg.d_model
        self.queries = param(rng.normal(0.0, 1.0, size=(cfg.k_queries, d)))
        self.prelude_block = CrossBlock(d, cfg.heads, rng, gate_init=cfg.prelude_gate_init, out_scale=0.5)
        self.w_adapt = param(rng.normal(0.0, 1.0 / math.sqrt(2 * d), size=(d, 2 * d)))
        self.gamma_adapt = param(np.ones(()))
        self.adapt_norm = RMSNorm(d)
        self.core = [CrossBlock(d, cfg.heads, rng, gate_init=cfg.core_gate_init, out_scale=0.5) for _ in range(cfg.core_blocks)]
        self.coda_block = CrossBlock(d, cfg.heads, rng, gate_init=cfg.coda_gate_init, out_scale=0.5)
        self.out_norm = RMSNorm(d)
        self.w_out = Linear(d, cfg.action_dim, rng)

    def core_parameters(self):
        return [p for blk in self.core for p in blk.parameters()]

    def prelude(self, ctx: ContextBundle):
        q = self.queries
        if ctx.batched:
            q = T.broadcast_to(q, (ctx.mid_feats.shape[0],) + q.shape)
        return self.prelude_block(q, ctx.mid_feats)

    def inject(self, s_prev, s_pre):
        joint = T.concat([s_prev, s_pre], axis=-1)
        return self.adapt_norm(self.gamma_adapt * T.matmul(joint, T.transpose(self.w_adapt)))

    def core_step(self, state: ScratchpadState, ctx: ContextBundle):
        if state.iter >= self.cfg.max_iters:
            raise BudgetError(f"core_step: iteration {state.iter + 1} exceeds max_iters={self.cfg.max_iters}")
        x = self.inject(state.s, state.s_pre)
        cond = ctx.conditioning
        for blk in self.core:
            x = blk(x, cond)
        return ScratchpadState(x, state.s_pre, state.iter + 1)

    def coda(self, state: ScratchpadState, ctx: ContextBundle):
        h = self.coda_block(state.s, ctx.conditioning)
        return ActionChunk(self.w_out(self.out_norm(h)), state.iter)

    def start(self, ctx: ContextBundle, rng):
        batch = ctx.mid_feats.shape[0] if ctx.batched else None
        s0 = init_scratchpad(self.cfg, rng, batch)
        return ScratchpadState(s0, self.prelude(ctx), 0)

    def forward(self, ctx: ContextBundle, r, rng, emit_intermediate=False):
        if not 1 <= r <= self.cfg.max_iters:
            raise BudgetError(f"forward: depth r={r} outside [1, {self.cfg.max_iters}]")
        state = self.start(ctx, rng)
        chunks = []
        for _ in range(r):
            state = self.core_step(state, ctx)
            if emit_intermediate:
                chunks.append(self.coda(state, ctx))
        if not emit_intermediate:
            chunks.append(self.coda(state, ctx))
        return chunks

    __call__ = forward
