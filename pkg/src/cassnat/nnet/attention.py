"""Multi-head attention with explicit boolean masks and a clipped relative-position bias."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DimensionError
from ..numcore import Tensor, ops
from .module import Linear, Module, param

# mask kinds understood by AttentionSpec
CM, NCM, TM = "CM", "NCM", "TM"


@dataclass(frozen=True)
class AttentionSpec:
    d_model: int
    n_heads: int
    mask_kind: str = NCM
    rel_pos_k: int | None = None

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ContractError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.mask_kind not in (CM, NCM, TM):
            raise ContractError(f"unknown mask kind {self.mask_kind!r}")
        if self.rel_pos_k is not None and self.rel_pos_k < 0:
            raise ContractError("rel_pos_k must be >= 0")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


# -- masks: True means "may attend" ---------------------------------------------------


def length_mask(lengths, t_max: int) -> np.ndarray:
    """B x T validity mask from lengths."""
    return np.arange(t_max)[None, :] < np.asarray(lengths)[:, None]


def ncm_mask(q_valid: np.ndarray, k_valid: np.ndarray) -> np.ndarray:
    """Non-causal: every query sees every non-padded key. B x nq x nk."""
    return np.broadcast_to(k_valid[:, None, :], (k_valid.shape[0], q_valid.shape[1], k_valid.shape[1])).copy()


def cm_mask(valid: np.ndarray) -> np.ndarray:
    """Causal: query i sees non-padded keys j <= i."""
    n = valid.shape[1]
    tri = np.tril(np.ones((n, n), dtype=bool))
    mask = tri[None] & valid[:, None, :]
    # padded queries past the last valid key still need one key to look at
    mask[:, :, 0] |= ~mask.any(axis=-1)
    return mask


def self_mask(kind: str, valid: np.ndarray) -> np.ndarray:
    if kind == CM:
        return cm_mask(valid)
    if kind == NCM:
        return ncm_mask(valid, valid)
    raise ContractError(f"self-attention mask must be CM or NCM, got {kind!r}")


# -- core -------------------------------------------------------------------------------


def relative_position_bias(table: Tensor, len_q: int, len_k: int, k: int) -> Tensor:
    """nh x len_q x len_k bias whose (i, j) entry is ``table[clip(j - i, -k, k) + k]``."""
    if k < 0:
        raise ContractError("k must be >= 0")
    if table.shape[0] != 2 * k + 1:
        raise DimensionError(f"relative_position_bias: table {table.shape} needs {2 * k + 1} rows")
    rel = np.arange(len_k)[None, :] - np.arange(len_q)[:, None]
    idx = np.clip(rel, -k, k) + k
    return ops.transpose(ops.take(table, idx), (2, 0, 1))


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask, bias: Tensor | None = None,
                     literal: bool = False, return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k) + bias, masked) v over the last two axes.

    ``q`` is (..., nq, d_k), ``k``/``v`` (..., nk, d_k), ``mask`` broadcasts to
    (..., nq, nk) with True on allowed keys. Disallowed scores are replaced by
    a large negative constant before the softmax. ``literal`` instead
    multiplies the unmasked softmax by the mask afterwards, which leaves rows
    unnormalized; it exists only for comparison.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-2:] != (q.shape[-2], k.shape[-2]):
        raise DimensionError(f"masked_attention: mask {mask.shape} vs queries {q.shape} and keys {k.shape}")
    if not mask.any(axis=-1).all():
        raise ContractError("masked_attention: a query row has no allowed key")
    scores = ops.scale(ops.matmul(q, ops.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))),
                       1.0 / np.sqrt(q.shape[-1]))
    if bias is not None:
        scores = ops.add(scores, bias)
    if literal:
        weights = ops.mul(ops.softmax(scores), mask.astype(np.float64))
    else:
        weights = ops.softmax(ops.masked_fill(scores, ~mask))
    out = ops.matmul(weights, v)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    """Projected multi-head attention; queries and keys may come from different sequences."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 rel_pos_k: int | None = None, dropout: float = 0.0):
        self.spec = AttentionSpec(d_model, n_heads, rel_pos_k=rel_pos_k)
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)
        self.rel = param(rng.normal(scale=0.02, size=(2 * rel_pos_k + 1, n_heads))) if rel_pos_k is not None else None
        self.p = dropout
        self.literal = False
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        h, dk = self.spec.n_heads, self.spec.d_k
        return ops.transpose(ops.reshape(x, (b, n, h, dk)), (0, 2, 1, 3))

    def __call__(self, query, key, value, mask) -> Tensor:
        """``query`` B x nq x d, ``key``/``value`` B x nk x d, ``mask`` B x nq x nk."""
        bsz, nq, d = query.shape
        nk = key.shape[1]
        q, k, v = self._split(self.wq(query)), self._split(self.wk(key)), self._split(self.wv(value))
        bias = None
        if self.rel is not None:
            bias = relative_position_bias(self.rel, nq, nk, self.spec.rel_pos_k)
        out, w = masked_attention(q, k, v, np.asarray(mask)[:, None], bias, self.literal, return_weights=True)
        self.last_weights = w.data
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (bsz, nq, d))
        return self.wo(self.dropout(out, self.p))


def sinusoidal(n: int, d: int) -> np.ndarray:
    """Standard n x d sine/cosine position table with base 10000."""
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
