"""Small bidirectional transformer that stands in for the frozen VLM backbone.

Entity tokens from a scene are concatenated with learned latent tokens and
passed through ``layers`` self-attention blocks. The hidden state after block
``mid_layer`` feeds the Prelude; the final hidden state, split into entity and
latent rows, conditions the recurrent core and the Coda.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import CapacityError, ConfigError, DimensionError
from .nn import Linear, Module, SelfAttentionBlock, param
from .sim.env import FEAT_DIM, N_ENTITY_TYPES


@dataclass
class EncoderConfig:
    d_model: int = 64
    layers: int = 4
    heads: int = 4
    n_latent: int = 8
    n_entity_max: int = 16
    mid_layer: int = 2
    proprio_dim: int = 3

    def validate(self):
        errors = []
        if not 1 <= self.mid_layer < self.layers:
            errors.append(f"encoder.mid_layer: need 1 <= mid_layer < layers ({self.layers}), got {self.mid_layer}")
        if self.heads < 1 or self.d_model % self.heads:
            errors.append(f"encoder.d_model: {self.d_model} is not divisible by heads={self.heads}")
        if self.n_latent < 1:
            errors.append("encoder.n_latent: must be >= 1")
        if self.n_entity_max < 1:
            errors.append("encoder.n_entity_max: must be >= 1")
        return errors

    def check(self):
        errors = self.validate()
        if errors:
            raise ConfigError("; ".join(errors))


@dataclass
class ContextBundle:
    mid_feats: T.Tensor  # [..., E+M, D]
    final_feats: T.Tensor  # [..., E+M, D]
    final_vis: T.Tensor  # [..., E, D]
    final_lat: T.Tensor  # [..., M, D]
    proprio_tok: T.Tensor  # [..., 1, D]

    def __post_init__(self):
        self._cond = None

    @property
    def conditioning(self):
        """Rows ``[final_vis; final_lat; proprio]`` shared by core and Coda."""
        # a no-grad concat must not be reused once a graph is wanted again
        stale = self._cond is not None and not self._cond.requires_grad and T.is_grad_enabled() and (
            self.final_feats.requires_grad or self.proprio_tok.requires_grad)
        if self._cond is None or stale:
            self._cond = T.concat([self.final_feats, self.proprio_tok], axis=-2)
        return self._cond

    @property
    def batched(self):
        return self.final_feats.ndim == 3


class ContextEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng):
        cfg.check()
        self.cfg = cfg
        d = cfg.d_model
        self.type_emb = param(rng.normal(0.0, 0.5, size=(N_ENTITY_TYPES, d)))
        self.feat_proj = Linear(FEAT_DIM, d, rng)
        self.pos_emb = param(rng.normal(0.0, 0.02, size=(cfg.n_entity_max, d)))
        self.latents = param(rng.normal(0.0, 0.5, size=(cfg.n_latent, d)))
        self.blocks = [SelfAttentionBlock(d, cfg.heads, rng, out_scale=0.5) for _ in range(cfg.layers)]
        self.proprio_proj = Linear(cfg.proprio_dim, d, rng)

    def embed(self, types, feats):
        """Token per entity: type embedding plus projected features.

        ``types`` is an int array ``[..., E]`` and ``feats`` ``[..., E, FEAT_DIM]``.
        """
        types = np.asarray(types)
        if types.shape[-1] > self.cfg.n_entity_max:
            raise CapacityError(f"{types.shape[-1]} entities exceed n_entity_max={self.cfg.n_entity_max}")
        onehot = np.eye(N_ENTITY_TYPES, dtype=self.type_emb.data.dtype)[types]
        feats = np.asarray(feats, dtype=self.type_emb.data.dtype)
        return T.matmul(T.Tensor(onehot), self.type_emb) + self.feat_proj(T.Tensor(feats))

    def encode(self, entity_toks, proprio):
        """Run the encoder and partition the hidden states."""
        cfg = self.cfg
        n_ent = entity_toks.shape[-2]
        if entity_toks.shape[-1] != cfg.d_model:
            raise DimensionError(f"entity tokens have width {entity_toks.shape[-1]}, expected {cfg.d_model}")
        if n_ent > cfg.n_entity_max:
            raise CapacityError(f"{n_ent} entities exceed n_entity_max={cfg.n_entity_max}")
        x = entity_toks + self.pos_emb[:n_ent]
        lat = self.latents
        if x.ndim == 3:
            lat = T.broadcast_to(lat, (x.shape[0],) + lat.shape)
        h = T.concat([x, lat], axis=-2)
        mid = None
        for i, block in enumerate(self.blocks, start=1):
            h = block(h)
            if i == cfg.mid_layer:
                mid = h
        p = np.asarray(proprio, dtype=self.type_emb.data.dtype)
        ptok = self.proprio_proj(T.Tensor(p[..., None, :]))
        return ContextBundle(
            mid_feats=mid,
            final_feats=h,
            final_vis=h[..., :n_ent, :],
            final_lat=h[..., n_ent:, :],
            proprio_tok=ptok,
        )

    def __call__(self, types, feats, proprio):
        return self.encode(self.embed(types, feats), proprio)


def embed_observation(obs, encoder: ContextEncoder):
    types, feats = obs.arrays()
    return encoder.embed(types, feats)
