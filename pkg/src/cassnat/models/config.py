from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from ..errors import ContractError
from ..nnet import CM, NCM, TM, BlockConfig


@dataclass(frozen=True)
class ModelConfig:
    """Sizes and switches shared by the AT baseline and the CASS-NAT model.

    The toy defaults are scaled down from a full-size setting
    (5 SAD + 2 MAD, kernel 31/15, k=8).
    """

    input_dim: int = 8
    vocab_size: int = 12  # blank + content tokens + EOS
    blank_id: int = 0
    eos_id: int = 11
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    n_enc: int = 2
    n_sad: int = 2
    n_mad: int = 1
    n_at_dec: int = 2
    conv_kernel: int = 7
    enc_conv: bool = True
    dec_conv: bool = True
    macaron: bool = True
    rel_pos_k: int | None = 4
    mad_self_mask: str = NCM
    mad_src_mask: str = NCM
    trigger_expansion: int = 1
    dropout: float = 0.1
    label_smoothing: float = 0.1
    mid_ctc: bool = True
    mid_ce: bool = True

    def __post_init__(self):
        if self.n_sad + self.n_mad < 1:
            raise ContractError("need at least one SAD or MAD block")
        if self.d_model % self.n_heads:
            raise ContractError("d_model must be divisible by n_heads")
        if self.mad_self_mask not in (CM, NCM) or self.mad_src_mask not in (NCM, TM):
            raise ContractError("MAD masks: self in {CM, NCM}, source in {NCM, TM}")
        if self.trigger_expansion < 0:
            raise ContractError("trigger_expansion must be >= 0")
        if not 0 <= self.label_smoothing < 1:
            raise ContractError("label_smoothing must lie in [0, 1)")

    def block(self, conv: bool) -> BlockConfig:
        return BlockConfig(self.d_ff, self.conv_kernel, self.dropout, use_conv=conv, macaron=self.macaron)

    @property
    def enc_tap(self) -> int | None:
        """1-based encoder layer after which the mid CTC head sits, or None."""
        tap = math.ceil(self.n_enc / 2)
        return tap if self.mid_ctc and tap < self.n_enc else None

    @property
    def mad_tap(self) -> int | None:
        tap = math.ceil(self.n_mad / 2)
        return tap if self.mid_ce and tap < self.n_mad else None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class LossWeights:
    """Joint objective weights.

    total = lambda_ctc_global * (lambda_ctc * CTC_final + (1 - lambda_ctc) * CTC_mid)
            + lambda_ce * CE_final + (1 - lambda_ce) * CE_mid

    A missing mid tap hands its weight to the final term.
    """

    lambda_ctc_global: float = 1.0
    lambda_ce: float = 0.99
    lambda_ctc: float = 0.5
    at_ctc_weight: float = 0.3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{f.name} must lie in [0, 1], got {v}")
