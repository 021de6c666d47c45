"""Parameter containers and transformer building blocks on top of ``tensor``."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

RMS_EPS = 1e-6


class Module:
    """Holds parameters (leaf tensors with ``requires_grad``) and submodules.

    Parameter order follows attribute assignment order, which keeps
    ``named_parameters`` stable across runs and checkpoint round-trips.
    """

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


def param(arr, name=None):
    return Tensor(np.asarray(arr, dtype=T.get_default_dtype()), requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, scale=1.0):
        self.weight = param(rng.normal(0.0, scale / math.sqrt(d_in), size=(d_in, d_out)))
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class RMSNorm(Module):
    def __init__(self, dim, eps=RMS_EPS):
        self.gain = param(np.ones(dim))
        self.eps = eps

    def __call__(self, x):
        return T.rms_norm(x, self.gain, self.eps)


class MultiHeadAttention(Module):
    def __init__(self, dim, heads, rng, out_scale=1.0):
        self.heads = heads
        self.wq = Linear(dim, dim, rng, bias=False)
        self.wk = Linear(dim, dim, rng, bias=False)
        self.wv = Linear(dim, dim, rng, bias=False)
        self.wo = Linear(dim, dim, rng, bias=False, scale=out_scale)

    def __call__(self, x, ctx=None):
        src = x if ctx is None else ctx
        out = T.attention(self.wq(x), self.wk(src), self.wv(src), self.heads)
        return self.wo(out)


class MLP(Module):
    def __init__(self, dim, hidden, rng, out_scale=1.0):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng, scale=out_scale)

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


class SelfAttentionBlock(Module):
    """Pre-norm residual block: bidirectional self-attention then MLP."""

    def __init__(self, dim, heads, rng, mlp_ratio=4, out_scale=1.0):
        self.norm1 = RMSNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, out_scale)
        self.norm2 = RMSNorm(dim)
        self.mlp = MLP(dim, mlp_ratio * dim, rng, out_scale)

    def __call__(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class CrossBlock(Module):
    """Self-attention, tanh-gated cross-attention to a context, MLP.

    The gate is a learned scalar; ``tanh(gate) == 0`` removes the context
    pathway exactly.
    """

    def __init__(self, dim, heads, rng, gate_init=0.0, mlp_ratio=4, out_scale=1.0):
        self.norm_self = RMSNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng, out_scale)
        self.norm_q = RMSNorm(dim)
        self.norm_ctx = RMSNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng, out_scale)
        self.gate = param(np.full((), gate_init))
        self.norm_mlp = RMSNorm(dim)
        self.mlp = MLP(dim, mlp_ratio * dim, rng, out_scale)

    def __call__(self, x, ctx):
        x = x + self.self_attn(self.norm_self(x))
        x = x + T.tanh(self.gate) * self.cross_attn(self.norm_q(x), self.norm_ctx(ctx))
        return x + self.mlp(self.norm_mlp(x))
