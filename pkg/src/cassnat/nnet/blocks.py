"""Encoder / decoder blocks built from attention, feed-forward and convolution modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..numcore import Tensor, ops
from .attention import NCM, MultiHeadAttention, self_mask, sinusoidal
from .module import LayerNorm, Linear, Module, param, xavier


@dataclass(frozen=True)
class BlockConfig:
    d_ff: int = 64
    conv_kernel: int = 7
    dropout: float = 0.1
    use_conv: bool = True
    macaron: bool = True

    def __post_init__(self):
        if self.conv_kernel % 2 == 0:
            raise ContractError("conv_kernel must be odd")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")


def _zero_padding(x: Tensor, valid: np.ndarray | None) -> Tensor:
    if valid is None:
        return x
    return ops.mul(x, valid[:, :, None].astype(x.data.dtype))


class FeedForward(Module):
    """LN -> linear -> swish -> linear."""

    def __init__(self, d: int, d_ff: int, rng, dropout: float = 0.0):
        self.norm = LayerNorm(d)
        self.l1 = Linear(d, d_ff, rng)
        self.l2 = Linear(d_ff, d, rng)
        self.p = dropout

    def __call__(self, x) -> Tensor:
        h = self.dropout(ops.swish(self.l1(self.norm(x))), self.p)
        return self.dropout(self.l2(h), self.p)


class ConvModule(Module):
    """LN -> pointwise GLU -> depthwise conv -> LN -> swish -> pointwise.

    Padded frames are zeroed ahead of the depthwise convolution so they
    behave exactly like the implicit zero padding at the sequence end.
    """

    def __init__(self, d: int, kernel: int, rng, dropout: float = 0.0):
        self.norm_in = LayerNorm(d)
        self.pw1 = Linear(d, 2 * d, rng)
        self.dw = param(rng.normal(scale=1.0 / np.sqrt(kernel), size=(kernel, d)))
        self.dw_bias = param(np.zeros(d))
        self.norm_mid = LayerNorm(d)
        self.pw2 = Linear(d, d, rng)
        self.p = dropout

    def __call__(self, x, valid: np.ndarray | None = None) -> Tensor:
        h = ops.glu(self.pw1(self.norm_in(x)))
        h = _zero_padding(h, valid)
        h = ops.depthwise_conv1d(h, self.dw, self.dw_bias)
        h = ops.swish(self.norm_mid(h))
        return self.dropout(self.pw2(h), self.p)


class SelfAttentionBlock(Module):
    """Conformer-style block, used for the encoder and for SAD layers.

    Macaron form: half FFN, self-attention, convolution, half FFN, final LN.
    The plain form is self-attention then one full FFN, also followed by LN.
    """

    def __init__(self, d: int, n_heads: int, cfg: BlockConfig, rng, rel_pos_k: int | None = None,
                 mask_kind: str = NCM):
        self.cfg = cfg
        self.mask_kind = mask_kind
        self.ffn1 = FeedForward(d, cfg.d_ff, rng, cfg.dropout) if cfg.macaron else None
        self.norm_att = LayerNorm(d)
        self.att = MultiHeadAttention(d, n_heads, rng, rel_pos_k, cfg.dropout)
        self.conv = ConvModule(d, cfg.conv_kernel, rng, cfg.dropout) if cfg.use_conv else None
        self.ffn2 = FeedForward(d, cfg.d_ff, rng, cfg.dropout)
        self.norm_out = LayerNorm(d)

    def __call__(self, x, valid: np.ndarray) -> Tensor:
        """``x`` B x T x d, ``valid`` B x T boolean."""
        half = 0.5 if self.cfg.macaron else 1.0
        if self.ffn1 is not None:
            x = ops.add(x, ops.scale(self.ffn1(x), 0.5))
        h = self.norm_att(x)
        x = ops.add(x, self.att(h, h, h, self_mask(self.mask_kind, valid)))
        if self.conv is not None:
            x = ops.add(x, self.conv(x, valid))
        x = ops.add(x, ops.scale(self.ffn2(x), half))
        return self.norm_out(x)


EncoderBlock = SelfAttentionBlock
SadBlock = SelfAttentionBlock


class MadBlock(Module):
    """Mixed-attention decoder block:

        s1 = s + FFN(s) / 2
        s2 = s1 + LN(SelfAttn(s1))
        s3 = s2 + Conv(s2)
        s4 = s3 + LN(SrcAttn(s3, H))
        o  = LN(s4 + FFN(s4) / 2)
    """

    def __init__(self, d: int, n_heads: int, cfg: BlockConfig, rng, rel_pos_k: int | None = None,
                 self_kind: str = NCM):
        self.cfg = cfg
        self.self_kind = self_kind
        self.ffn1 = FeedForward(d, cfg.d_ff, rng, cfg.dropout)
        self.self_att = MultiHeadAttention(d, n_heads, rng, rel_pos_k, cfg.dropout)
        self.norm_self = LayerNorm(d)
        self.conv = ConvModule(d, cfg.conv_kernel, rng, cfg.dropout) if cfg.use_conv else None
        self.src_att = MultiHeadAttention(d, n_heads, rng, None, cfg.dropout)
        self.norm_src = LayerNorm(d)
        self.ffn2 = FeedForward(d, cfg.d_ff, rng, cfg.dropout)
        self.norm_out = LayerNorm(d)

    def __call__(self, s, valid: np.ndarray, h, src_mask: np.ndarray) -> Tensor:
        """``s`` B x U x d tokens, ``h`` B x T x d frames, ``src_mask`` B x U x T."""
        s = ops.add(s, ops.scale(self.ffn1(s), 0.5))
        s = ops.add(s, self.norm_self(self.self_att(s, s, s, self_mask(self.self_kind, valid))))
        if self.conv is not None:
            s = ops.add(s, self.conv(s, valid))
        s = ops.add(s, self.norm_src(self.src_att(s, h, h, src_mask)))
        return self.norm_out(ops.add(s, ops.scale(self.ffn2(s), 0.5)))


class Taee(Module):
    """Token-level acoustic embeddings: one source-attention layer.

    Queries are sinusoidal encodings of token positions, keys and values the
    encoder frames, and the trigger mask limits each token to its segment.
    """

    def __init__(self, d: int, n_heads: int, rng, dropout: float = 0.0):
        self.d = d
        self.att = MultiHeadAttention(d, n_heads, rng, None, dropout)

    def queries(self, bsz: int, n: int) -> Tensor:
        return Tensor(np.broadcast_to(sinusoidal(n, self.d), (bsz, n, self.d)).copy())

    def __call__(self, h, trigger: np.ndarray) -> Tensor:
        """``trigger`` is B x (U'+1) x T with True where a token may look."""
        trigger = np.asarray(trigger, dtype=bool)
        if not trigger.any(axis=-1).all():
            raise ContractError("trigger mask has an empty row")
        q = self.queries(h.shape[0], trigger.shape[1])
        return self.att(q, h, h, trigger)


class Subsampler(Module):
    """Two stride-2 convolutions (kernel 3, padding 1) with ReLU: T -> ceil(ceil(T/2)/2)."""

    def __init__(self, d_in: int, d: int, rng):
        self.c1 = param(xavier(rng, 3 * d_in, d).reshape(3, d_in, d))
        self.b1 = param(np.zeros(d))
        self.c2 = param(xavier(rng, 3 * d, d).reshape(3, d, d))
        self.b2 = param(np.zeros(d))
        self.out = Linear(d, d, rng)

    @staticmethod
    def out_length(t) -> np.ndarray:
        t = np.asarray(t)
        return -(-(-(-t // 2)) // 2)

    def __call__(self, x, lengths) -> tuple[Tensor, np.ndarray]:
        lengths = np.asarray(lengths, dtype=np.int64)
        valid = np.arange(x.shape[1])[None, :] < lengths[:, None]
        x = _zero_padding(x, valid)
        x = ops.relu(ops.conv1d(x, self.c1, self.b1, stride=2, padding=1))
        lengths = -(-lengths // 2)
        valid = np.arange(x.shape[1])[None, :] < lengths[:, None]
        x = _zero_padding(x, valid)
        x = ops.relu(ops.conv1d(x, self.c2, self.b2, stride=2, padding=1))
        lengths = -(-lengths // 2)
        return self.out(x), lengths
