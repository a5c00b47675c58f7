from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..nnet import EncoderBlock, Linear, Module, Subsampler, sinusoidal
from ..numcore import Tensor, ops
from .config import ModelConfig


@dataclass
class EncoderOutput:
    h: Tensor  # B x T' x d
    lengths: np.ndarray
    valid: np.ndarray  # B x T'
    ctc_logits: Tensor  # B x T' x V
    mid_ctc_logits: Tensor | None


class Encoder(Module):
    """4x subsampling, conformer blocks and CTC heads (final plus optional mid tap)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.sub = Subsampler(cfg.input_dim, cfg.d_model, rng)
        self.blocks = [EncoderBlock(cfg.d_model, cfg.n_heads, cfg.block(cfg.enc_conv), rng, cfg.rel_pos_k)
                       for _ in range(cfg.n_enc)]
        self.ctc_head = Linear(cfg.d_model, cfg.vocab_size, rng)
        self.mid_head = Linear(cfg.d_model, cfg.vocab_size, rng) if cfg.enc_tap else None

    def __call__(self, features, lengths, with_mid: bool = True) -> EncoderOutput:
        x, lens = self.sub(Tensor(features) if not isinstance(features, Tensor) else features, lengths)
        if (lens <= 0).any():
            raise ContractError("an utterance has no frames left after subsampling")
        if self.cfg.rel_pos_k is None:
            x = ops.add(x, sinusoidal(x.shape[1], self.cfg.d_model))
        x = self.dropout(x, self.cfg.dropout)
        valid = np.arange(x.shape[1])[None, :] < lens[:, None]
        mid = None
        for i, block in enumerate(self.blocks, start=1):
            x = block(x, valid)
            if with_mid and self.mid_head is not None and i == self.cfg.enc_tap:
                mid = self.mid_head(x)
        return EncoderOutput(x, lens, valid, self.ctc_head(x), mid)
