"""Expert demonstrations: collection, batching arrays and file formats.

Binary container layout (little-endian)::

    magic      8 bytes   b"RDDEMO\\x00\\x01"
    version    u32
    horizon    u32
    action_dim u32
    slots      u32       entity slots per record
    feat_dim   u32
    count      u64
    records    count x fixed-width record, see ``record_dtype``

A record stores tier, task id, entity count, entity types and features padded
to ``slots`` (padding rows are ignored on load), proprioception and the target
chunk.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import IncompatibleVersionError, IntegrityError
from .env import ACTION_DIM, FEAT_DIM, Entity, SimObservation, reset, step
from .expert import scripted_expert

MAGIC = b"RDDEMO\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIIQ")
DEFAULT_SLOTS = 8


@dataclass
class DemoSample:
    observation: SimObservation
    proprio: np.ndarray
    target_chunk: np.ndarray  # [H, action_dim]

    @property
    def tier(self):
        return self.observation.tier


def expert_chunk(state, horizon):
    """Next ``horizon`` expert actions from ``state`` if the expert acted alone.

    Once the episode would end, the remaining steps repeat the final action.
    """
    s = state
    acts = []
    while len(acts) < horizon and not s.done():
        a = scripted_expert(s)
        acts.append(a)
        s = step(s, a)
    if not acts:
        acts.append(scripted_expert(state))
    while len(acts) < horizon:
        acts.append(acts[-1])
    return np.stack(acts)


def collect_demos(tiers, episodes_per_tier, horizon, seed=0, noise=0.0):
    """Roll the expert and cut every visited state into a training sample.

    With ``noise > 0`` the executed velocity is perturbed by Gaussian noise so
    that recovery states get visited; targets are always the clean expert plan
    from the visited state.
    """
    if episodes_per_tier < 1:
        raise ValueError("episodes_per_tier must be >= 1")
    noise_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD3A0]))
    out = []
    for tier in tiers:
        for ep in range(episodes_per_tier):
            state = reset(tier, seed + ep)
            if noise == 0.0:
                out.extend(_clean_episode(state, horizon))
                continue
            while not state.done():
                chunk = expert_chunk(state, horizon)
                out.append(DemoSample(state.observation(), state.proprio, chunk))
                act = chunk[0].copy()
                act[:2] += noise * noise_rng.standard_normal(2)
                state = step(state, np.clip(act, -1.0, 1.0))
    return out


def _clean_episode(state, horizon):
    states, actions = [], []
    while not state.done():
        a = scripted_expert(state)
        states.append(state)
        actions.append(a)
        state = step(state, a)
    actions = np.stack(actions)
    samples = []
    for t, s in enumerate(states):
        chunk = actions[t : t + horizon]
        if len(chunk) < horizon:
            chunk = np.concatenate([chunk, np.repeat(chunk[-1:], horizon - len(chunk), axis=0)])
        samples.append(DemoSample(s.observation(), s.proprio, chunk))
    return samples


@dataclass
class DemoGroup:
    """Samples sharing one entity count, stacked for batched training."""

    types: np.ndarray  # [N, E]
    feats: np.ndarray  # [N, E, F]
    proprio: np.ndarray  # [N, 3]
    targets: np.ndarray  # [N, H, A]

    def __len__(self):
        return len(self.types)

    def take(self, idx):
        return self.types[idx], self.feats[idx], self.proprio[idx], self.targets[idx]


def group_by_entities(samples):
    """Dict ``n_entities -> DemoGroup`` with deterministic (sorted) keys."""
    buckets = {}
    for s in samples:
        types, feats = s.observation.arrays()
        buckets.setdefault(len(types), []).append((types, feats, s.proprio, s.target_chunk))
    groups = {}
    for n in sorted(buckets):
        rows = buckets[n]
        groups[n] = DemoGroup(
            np.stack([r[0] for r in rows]),
            np.stack([r[1] for r in rows]),
            np.stack([r[2] for r in rows]),
            np.stack([r[3] for r in rows]),
        )
    return groups


def record_dtype(horizon, action_dim=ACTION_DIM, slots=DEFAULT_SLOTS, feat_dim=FEAT_DIM):
    return np.dtype(
        [
            ("tier", "<u1"),
            ("task_id", "<u1"),
            ("n_ent", "<u1"),
            ("pad", "<u1"),
            ("types", "<u1", (slots,)),
            ("feats", "<f8", (slots, feat_dim)),
            ("proprio", "<f8", (3,)),
            ("target", "<f8", (horizon, action_dim)),
        ]
    )


def save_demos(path, samples, slots=DEFAULT_SLOTS):
    horizon, action_dim = samples[0].target_chunk.shape if samples else (0, ACTION_DIM)
    dt = record_dtype(horizon, action_dim, slots)
    rec = np.zeros(len(samples), dtype=dt)
    for i, s in enumerate(samples):
        types, feats = s.observation.arrays()
        if len(types) > slots:
            raise ValueError(f"sample {i} has {len(types)} entities, container holds {slots}")
        rec[i]["tier"] = s.observation.tier
        rec[i]["task_id"] = s.observation.task_id
        rec[i]["n_ent"] = len(types)
        rec[i]["types"][: len(types)] = types
        rec[i]["feats"][: len(types)] = feats
        rec[i]["proprio"] = s.proprio
        rec[i]["target"] = s.target_chunk
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, horizon, action_dim, slots, FEAT_DIM, len(samples)))
        fh.write(rec.tobytes())


def load_demos(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise IntegrityError(f"{path}: file shorter than header")
    magic, version, horizon, action_dim, slots, feat_dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise IntegrityError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise IncompatibleVersionError(f"{path}: demo format version {version}, expected {VERSION}")
    dt = record_dtype(horizon, action_dim, slots, feat_dim)
    body = raw[_HEADER.size :]
    if len(body) != count * dt.itemsize:
        raise IntegrityError(f"{path}: expected {count} records of {dt.itemsize} bytes, got {len(body)} bytes")
    rec = np.frombuffer(body, dtype=dt)
    out = []
    for r in rec:
        n = int(r["n_ent"])
        ents = [Entity(int(k), f[:2].copy(), (float(f[2]), float(f[3]))) for k, f in zip(r["types"][:n], r["feats"][:n])]
        obs = SimObservation(ents, int(r["tier"]), int(r["task_id"]))
        out.append(DemoSample(obs, r["proprio"].copy(), r["target"].copy()))
    return out


def export_demos_csv(path, samples):
    """One row per sample: tier, entity list, proprio, flattened target chunk."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if not samples:
            w.writerow(["tier", "task_id", "n_entities", "entities", "proprio", "target"])
            return
        h, a = samples[0].target_chunk.shape
        header = ["tier", "task_id", "n_entities", "entities", "px", "py", "openness"]
        header += [f"a{t}_{j}" for t in range(h) for j in range(a)]
        w.writerow(header)
        for s in samples:
            ents = ";".join(f"{e.kind}:{e.pos[0]:.6f}:{e.pos[1]:.6f}:{e.extra[0]:.6f}:{e.extra[1]:.6f}" for e in s.observation.entities)
            row = [s.observation.tier, s.observation.task_id, len(s.observation.entities), ents]
            row += [f"{v:.9g}" for v in s.proprio]
            row += [f"{v:.9g}" for v in s.target_chunk.ravel()]
            w.writerow(row)
