"""Encoder + head bundled as one trainable policy."""

from __future__ import annotations

import numpy as np

from .encoder import ContextEncoder, EncoderConfig
from .head import HeadConfig, RecurrentDepthHead
from .nn import Module


class RDPolicy(Module):
    def __init__(self, enc_cfg: EncoderConfig, head_cfg: HeadConfig, seed=0):
        rng = np.random.default_rng(seed)
        self.encoder = ContextEncoder(enc_cfg, rng)
        self.head = RecurrentDepthHead(head_cfg, rng)

    def context(self, types, feats, proprio):
        return self.encoder(types, feats, proprio)

    def observe(self, obs, proprio):
        types, feats = obs.arrays()
        return self.encoder(types, feats, proprio)
