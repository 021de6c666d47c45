"""Inference-time depth selection and execution-horizon policies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import CalibrationError, ConfigError


@dataclass
class StopPolicy:
    kind: str = "pure_kl"  # "fixed" | "pure_kl"
    fixed_r: int = 8
    delta: float = 1e-3
    min_iters: int = 2
    max_iters: int = 16

    def validate(self):
        errors = []
        if self.kind not in ("fixed", "pure_kl"):
            errors.append(f"stop.kind: unknown stop policy {self.kind!r}")
        if self.kind == "fixed" and self.fixed_r < 1:
            errors.append("stop.fixed_r: must be >= 1")
        if self.kind == "pure_kl":
            if self.min_iters < 2:
                errors.append("stop.min_iters: consecutive-chunk test needs min_iters >= 2")
            if not self.delta > 0:
                errors.append("stop.delta: must be > 0")
            if self.max_iters < self.min_iters:
                errors.append("stop.max_iters: must be >= min_iters")
        return errors

    def check(self):
        errors = self.validate()
        if errors:
            raise ConfigError("; ".join(errors))

    @property
    def budget(self):
        return self.fixed_r if self.kind == "fixed" else self.max_iters


@dataclass
class ExecPolicy:
    kind: str = "full"  # "full" | "binary" | "linear_decay"
    tau: int = 8
    h_long: int = 8
    h_short: int = 4
    tau_base: int = 8
    h_max: int = 8
    h_min: int = 2

    def validate(self, horizon=None):
        errors = []
        if self.kind not in ("full", "binary", "linear_decay"):
            errors.append(f"exec.kind: unknown execution policy {self.kind!r}")
        if not 1 <= self.h_min <= self.h_max:
            errors.append(f"exec.h_min: need 1 <= h_min <= h_max, got h_min={self.h_min}, h_max={self.h_max}")
        if not 1 <= self.h_short <= self.h_long:
            errors.append(f"exec.h_short: need 1 <= h_short <= h_long, got h_short={self.h_short}, h_long={self.h_long}")
        if horizon is not None:
            if self.h_max > horizon:
                errors.append(f"exec.h_max: {self.h_max} exceeds chunk horizon {horizon}")
            if self.h_long > horizon:
                errors.append(f"exec.h_long: {self.h_long} exceeds chunk horizon {horizon}")
        return errors


@dataclass
class InferenceResult:
    chunk: object  # ActionChunk
    k_star: int
    exec_horizon: int
    mse_trace: list = field(default_factory=list)


def chunk_mse(a, b):
    d = a - b
    return float(np.mean(d * d))


def run_adaptive(head, ctx, stop: StopPolicy, rng, exec_policy: ExecPolicy | None = None):
    """Unroll until consecutive chunks agree to within ``delta`` (or the cap).

    ``k_star`` is the index of the last computed chunk, which is the one
    returned. Runs without recording a graph.
    """
    stop.check()
    horizon = head.cfg.horizon
    with T.no_grad():
        state = head.start(ctx, rng)
        prev, chunk, trace = None, None, []
        limit = stop.budget
        for k in range(1, limit + 1):
            state = head.core_step(state, ctx)
            chunk = head.coda(state, ctx)
            cur = chunk.actions.data
            if prev is not None:
                trace.append(chunk_mse(cur, prev))
                if stop.kind == "pure_kl" and k >= stop.min_iters and trace[-1] < stop.delta:
                    break
            prev = cur
    k_star = chunk.produced_at_iter
    h_exec = exec_horizon(k_star, exec_policy or ExecPolicy(), horizon)
    return InferenceResult(chunk, k_star, h_exec, trace)


def exec_horizon(k_star, pol: ExecPolicy, horizon=None):
    """Number of chunk steps to execute given the stopping iteration."""
    if k_star < 1:
        raise ValueError(f"k_star must be >= 1, got {k_star}")
    if pol.kind == "full":
        h = horizon if horizon is not None else pol.h_max
    elif pol.kind == "binary":
        h = pol.h_long if k_star <= pol.tau else pol.h_short
    elif pol.kind == "linear_decay":
        h = max(pol.h_min, pol.h_max - max(0, k_star - pol.tau_base))
    else:
        raise ConfigError(f"unknown execution policy {pol.kind!r}")
    upper = horizon if horizon is not None else h
    return int(min(max(h, 1), upper))


def stop_index(trace, delta, min_iters, max_iters):
    """First-crossing stopping iteration implied by a consecutive-MSE trace.

    ``trace[i]`` is the MSE between chunks ``i + 2`` and ``i + 1``.
    """
    for i, m in enumerate(trace):
        k = i + 2
        if k > max_iters:
            break
        if k >= min_iters and m < delta:
            return k
    return min(max_iters, len(trace) + 1)


def mse_traces(head, contexts, max_iters, seeds):
    """Full-length consecutive-MSE traces for each context (no early exit)."""
    probe = StopPolicy(kind="fixed", fixed_r=max_iters)
    out = []
    for ctx, seed in zip(contexts, seeds):
        res = run_adaptive(head, ctx, probe, np.random.default_rng(seed))
        out.append(res.mse_trace)
    return out


@dataclass
class Calibration:
    delta: float
    mean_iters: float
    evaluations: int


def calibrate_delta(head, contexts, target_mean_iters, stop: StopPolicy | None = None, seeds=None,
                    lo=1e-8, hi=1.0, tol=0.5, max_bisections=60):
    """Log-scale bisection for a threshold whose mean stopping depth hits a target.

    Traces are computed once per context; stopping depth as a function of the
    threshold is then evaluated exactly from the traces, so the search is
    deterministic and the mean depth is monotone in the threshold.
    """
    if not contexts:
        raise ValueError("calibrate_delta needs at least one validation context")
    stop = stop or StopPolicy()
    seeds = list(range(len(contexts))) if seeds is None else list(seeds)
    traces = mse_traces(head, contexts, stop.max_iters, seeds)

    def mean_k(delta):
        return float(np.mean([stop_index(t, delta, stop.min_iters, stop.max_iters) for t in traces]))

    k_lo, k_hi = mean_k(lo), mean_k(hi)  # small delta -> deep, large delta -> shallow
    if not (k_hi - tol <= target_mean_iters <= k_lo + tol):
        raise CalibrationError(
            f"target mean depth {target_mean_iters} outside achievable range [{k_hi}, {k_lo}] for delta in [{lo}, {hi}]",
            achieved_range=(k_hi, k_lo),
        )
    a, b = math.log(lo), math.log(hi)
    for i in range(max_bisections):
        mid = 0.5 * (a + b)
        m = mean_k(math.exp(mid))
        if abs(m - target_mean_iters) <= tol:
            return Calibration(math.exp(mid), m, i + 1)
        if m > target_mean_iters:
            a = mid
        else:
            b = mid
    for end in (lo, hi):
        if abs(mean_k(end) - target_mean_iters) <= tol:
            return Calibration(end, mean_k(end), max_bisections)
    raise CalibrationError(
        f"no delta in [{lo}, {hi}] gives mean depth within {tol} of {target_mean_iters}",
        achieved_range=(k_hi, k_lo),
    )
