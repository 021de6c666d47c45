"""Scripted waypoint expert used to generate demonstrations.

The controller is a pure function of the current state so a cloned policy can
recover from off-distribution states the same way the expert would.
"""

from __future__ import annotations

import math

import numpy as np

from .env import SimState, segment_distance

GAIN = 10.0
PLAN_MARGIN = 0.05  # clearance of the detour polygon around an obstacle
GRASP_TOL = 0.02
RELEASE_TOL = 0.02
OPEN_GAIN = 4.0


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


def _tangent_dirs(p, center, rho):
    """Unit vectors (from ``center``) of the two tangent points seen from ``p``."""
    rel = p - center
    d = np.linalg.norm(rel)
    base = math.atan2(rel[1], rel[0])
    alpha = math.acos(min(1.0, rho / d))
    return [np.array([math.cos(base + s * alpha), math.sin(base + s * alpha)]) for s in (1.0, -1.0)]


def detour_waypoint(pos, target, center, radius):
    """Vertex of the tangent polygon around the obstacle on the shorter side.

    Returns ``None`` when the straight segment already clears the obstacle.
    """
    if segment_distance(pos, target, center) >= radius + 0.5 * PLAN_MARGIN:
        return None
    rho = radius + PLAN_MARGIN
    if np.linalg.norm(pos - center) <= rho * 1.01:
        # Inside the planning annulus: back out radially, biased toward the target side.
        out = _unit(pos - center)
        rel = target - center
        side = np.sign(out[0] * rel[1] - out[1] * rel[0]) or 1.0
        tang = np.array([-out[1], out[0]]) * side
        return center + rho * 1.3 * _unit(out + 0.7 * tang)
    best, best_len = None, math.inf
    tp = _tangent_dirs(pos, center, rho)
    tt = _tangent_dirs(target, center, rho) if np.linalg.norm(target - center) > rho else [_unit(target - center)] * 2
    for u1, u2 in ((tp[0], tt[1]), (tp[1], tt[0])):
        denom = 1.0 + float(u1 @ u2)
        if denom < 0.05:
            continue
        w = center + rho * (u1 + u2) / denom
        length = np.linalg.norm(w - pos) + np.linalg.norm(target - w)
        if length < best_len:
            best, best_len = w, length
    return best


def _drive(pos, target, obstacles):
    for center, radius in obstacles:
        w = detour_waypoint(pos, target, center, radius)
        if w is not None:
            return _unit(w - pos)
    v = GAIN * (target - pos)
    n = np.linalg.norm(v)
    return v / n if n > 1.0 else v


def scripted_expert(state: SimState):
    """Expert action ``(vx, vy, gripper)`` with every component in ``[-1, 1]``."""
    pos = state.agent
    if state.tier < 2:
        vel = _drive(pos, state.goal, state.obstacles)
        grip = OPEN_GAIN * (1.0 - state.openness)
    elif state.held is None:
        obj = state.objects[0]
        vel = _drive(pos, obj, state.obstacles)
        if np.linalg.norm(obj - pos) <= GRASP_TOL and state.openness >= 0.5:
            grip = -1.0
        elif state.openness < 0.5:
            grip = 1.0
        else:
            grip = OPEN_GAIN * (1.0 - state.openness)
    else:
        vel = _drive(pos, state.goal, state.obstacles)
        grip = 1.0 if np.linalg.norm(state.objects[state.held] - state.goal) <= RELEASE_TOL else -1.0
    return np.clip(np.array([vel[0], vel[1], grip]), -1.0, 1.0)
