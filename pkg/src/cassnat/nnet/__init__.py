"""Neural building blocks."""

from .attention import (
    CM,
    NCM,
    TM,
    AttentionSpec,
    MultiHeadAttention,
    cm_mask,
    length_mask,
    masked_attention,
    ncm_mask,
    relative_position_bias,
    self_mask,
    sinusoidal,
)
from .blocks import (
    BlockConfig,
    ConvModule,
    EncoderBlock,
    FeedForward,
    MadBlock,
    SadBlock,
    SelfAttentionBlock,
    Subsampler,
    Taee,
)
from .module import LayerNorm, Linear, Module, param

__all__ = [
    "CM", "NCM", "TM", "AttentionSpec", "MultiHeadAttention", "cm_mask", "length_mask", "masked_attention",
    "ncm_mask", "relative_position_bias", "self_mask", "sinusoidal", "BlockConfig", "ConvModule",
    "EncoderBlock", "FeedForward", "MadBlock", "SadBlock", "SelfAttentionBlock", "Subsampler", "Taee",
    "LayerNorm", "Linear", "Module", "param",
]
