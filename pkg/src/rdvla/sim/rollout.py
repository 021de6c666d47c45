"""Closed-loop evaluation of a policy in the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..adaptive import ExecPolicy, StopPolicy, run_adaptive
from .env import EPISODE_CAPS, reset, step


@dataclass
class Decision:
    step: int
    k_star: int
    exec_horizon: int
    mse_trace: list


@dataclass
class EpisodeOutcome:
    success: bool
    steps_used: int
    tier: int
    seed: int
    decisions: list = field(default_factory=list)

    @property
    def k_stars(self):
        return [d.k_star for d in self.decisions]


def episode_rng(seed):
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0xE7A1]))


def rollout(policy, stop: StopPolicy, exec_policy: ExecPolicy, tier, seed, cap=None):
    """Replan-execute loop until success or the step cap."""
    cap = EPISODE_CAPS[tier] if cap is None else cap
    state = reset(tier, seed, cap=cap)
    rng = episode_rng(seed)
    out = EpisodeOutcome(False, 0, tier, seed)
    with T.no_grad():
        while not state.done():
            ctx = policy.observe(state.observation(), state.proprio)
            res = run_adaptive(policy.head, ctx, stop, rng, exec_policy)
            out.decisions.append(Decision(state.step_count, res.k_star, res.exec_horizon, res.mse_trace))
            actions = res.chunk.actions.data
            for a in actions[: res.exec_horizon]:
                state = step(state, a)
                if state.done():
                    break
    out.success = state.success()
    out.steps_used = state.step_count
    return out


def evaluate(policy, stop, exec_policy, tiers, seeds, cap=None):
    return [rollout(policy, stop, exec_policy, tier, seed, cap) for tier in tiers for seed in seeds]


def success_rate(outcomes):
    return float(np.mean([o.success for o in outcomes])) if outcomes else 0.0
