"""Deterministic 2D point-robot manipulation world with three difficulty tiers.

Tier 0 reaches a goal in open space, tier 1 reaches a goal whose straight-line
path is blocked by a circular obstacle, tier 2 picks an object, carries it
around an obstacle and releases it on the goal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError

AGENT, OBJECT, GOAL, OBSTACLE = 0, 1, 2, 3
ENTITY_NAMES = ("agent", "object", "goal", "obstacle")
N_ENTITY_TYPES = 4
FEAT_DIM = 4
ACTION_DIM = 3

DT = 0.05
SUCCESS_RADIUS = 0.05
GRASP_RADIUS = 0.05
GRIPPER_RATE = 0.5  # openness change per step at full command
EPISODE_CAPS = {0: 40, 1: 80, 2: 120}


@dataclass
class Entity:
    kind: int
    pos: np.ndarray
    extra: tuple = (0.0, 0.0)

    def features(self):
        return np.array([self.pos[0], self.pos[1], self.extra[0], self.extra[1]], dtype=np.float64)


@dataclass
class SimObservation:
    entities: list
    tier: int
    task_id: int

    def arrays(self):
        """Entity type ids ``[E]`` and feature rows ``[E, FEAT_DIM]``."""
        types = np.array([e.kind for e in self.entities], dtype=np.int64)
        feats = np.stack([e.features() for e in self.entities])
        return types, feats


@dataclass
class SimState:
    tier: int
    seed: int
    agent: np.ndarray
    goal: np.ndarray
    objects: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)  # (center, radius)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    openness: float = 1.0
    held: int | None = None
    step_count: int = 0
    cap: int = 0

    def copy(self):
        return SimState(
            self.tier, self.seed, self.agent.copy(), self.goal.copy(),
            [o.copy() for o in self.objects], list(self.obstacles), self.velocity.copy(),
            self.openness, self.held, self.step_count, self.cap,
        )

    @property
    def proprio(self):
        return np.array([self.agent[0], self.agent[1], self.openness], dtype=np.float64)

    def observation(self):
        held = 1.0 if self.held is not None else 0.0
        ents = [Entity(AGENT, self.agent.copy(), (self.openness, held))]
        for i, obj in enumerate(self.objects):
            ents.append(Entity(OBJECT, obj.copy(), (1.0 if self.held == i else 0.0, 0.0)))
        ents.append(Entity(GOAL, self.goal.copy(), (self.tier / 2.0, 0.0)))
        for center, radius in self.obstacles:
            ents.append(Entity(OBSTACLE, center.copy(), (radius, 0.0)))
        return SimObservation(ents, self.tier, self.tier)

    def success(self):
        if self.tier < 2:
            return bool(np.linalg.norm(self.agent - self.goal) <= SUCCESS_RADIUS)
        return self.held is None and bool(np.linalg.norm(self.objects[0] - self.goal) <= SUCCESS_RADIUS)

    def done(self):
        return self.success() or self.step_count >= self.cap


def segment_distance(p, q, c):
    """Distance from point ``c`` to the segment ``p``-``q``."""
    d = q - p
    L2 = float(d @ d)
    if L2 == 0.0:
        return float(np.linalg.norm(c - p))
    t = min(1.0, max(0.0, float((c - p) @ d) / L2))
    return float(np.linalg.norm(p + t * d - c))


def _rng(tier, seed):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(tier), 0x5EED]))


def _point(rng, lo=0.1, hi=0.9):
    return rng.uniform(lo, hi, size=2)


def _blocking_obstacle(rng, a, b):
    """Circle placed near the middle of ``a``-``b`` that the segment crosses."""
    d = b - a
    L = np.linalg.norm(d)
    n = np.array([-d[1], d[0]]) / L
    radius = rng.uniform(0.08, 0.13)
    t = rng.uniform(0.4, 0.6)
    off = rng.uniform(0.2, 0.6) * radius * rng.choice([-1.0, 1.0])
    return a + t * d + off * n, radius


def reset(tier, seed, cap=None):
    if tier not in (0, 1, 2):
        raise ParameterError(f"tier must be 0, 1 or 2, got {tier!r}")
    rng = _rng(tier, seed)
    cap = EPISODE_CAPS[tier] if cap is None else int(cap)
    while True:
        if tier == 0:
            agent, goal = _point(rng), _point(rng)
            if 0.3 <= np.linalg.norm(goal - agent) <= 0.8:
                return SimState(tier, seed, agent, goal, cap=cap)
            continue
        if tier == 1:
            agent, goal = _point(rng), _point(rng)
            if not 0.5 <= np.linalg.norm(goal - agent) <= 0.85:
                continue
            center, radius = _blocking_obstacle(rng, agent, goal)
            if not _obstacle_ok(center, radius, [agent, goal]):
                continue
            return SimState(tier, seed, agent, goal, obstacles=[(center, radius)], cap=cap)
        obj, goal = _point(rng), _point(rng)
        if not 0.5 <= np.linalg.norm(goal - obj) <= 0.85:
            continue
        center, radius = _blocking_obstacle(rng, obj, goal)
        agent = _point(rng)
        if not 0.15 <= np.linalg.norm(obj - agent) <= 0.45:
            continue
        if not _obstacle_ok(center, radius, [agent, obj, goal]):
            continue
        if segment_distance(agent, obj, center) < radius + 0.06:
            continue
        return SimState(tier, seed, agent, goal, objects=[obj], obstacles=[(center, radius)], cap=cap)


def _obstacle_ok(center, radius, points):
    if np.any(center - radius < 0.15) or np.any(center + radius > 0.85):
        return False
    return all(np.linalg.norm(p - center) >= radius + 0.1 for p in points)


def step(state, action):
    """Advance one Euler step of length ``DT``; returns a new state."""
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(3), -1.0, 1.0)
    if not np.all(np.isfinite(a)):
        a = np.zeros(3)
    s = state.copy()
    old = s.agent
    new = np.clip(old + DT * a[:2], 0.0, 1.0)
    if any(np.linalg.norm(new - c) < r for c, r in s.obstacles):
        new = old.copy()
    s.velocity = (new - old) / DT
    s.agent = new

    prev_open = s.openness
    s.openness = float(np.clip(prev_open + GRIPPER_RATE * a[2], 0.0, 1.0))
    if prev_open >= 0.5 > s.openness and s.held is None:
        for i, obj in enumerate(s.objects):
            if np.linalg.norm(obj - s.agent) <= GRASP_RADIUS:
                s.held = i
                break
    elif prev_open < 0.5 <= s.openness and s.held is not None:
        s.held = None
    if s.held is not None:
        s.objects[s.held] = s.agent.copy()
    s.step_count += 1
    return s
