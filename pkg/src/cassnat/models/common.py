from __future__ import annotations

import numpy as np

from ..numcore import Tensor, ops


def mask_blank(logits: Tensor, blank_id: int) -> Tensor:
    """Decoders never emit blank; remove it from their output distribution."""
    mask = np.zeros(logits.shape[-1], dtype=bool)
    mask[blank_id] = True
    return ops.masked_fill(logits, mask)


def smoothed_nll(logits: Tensor, targets: np.ndarray, weights: np.ndarray, eps: float, blank_id: int) -> Tensor:
    """Per-row label-smoothed cross entropy, summed over positions.

    ``logits`` N x L x V (blank already masked), ``targets`` N x L, ``weights``
    N x L with 1 on real positions. The smoothing mass is spread over the
    V - 1 non-blank classes. Returns N values.
    """
    n, length, v = logits.shape
    logp = ops.log_softmax(logits)
    q = np.full((n, length, v), eps / (v - 1))
    q[..., blank_id] = 0.0
    safe = np.where(weights > 0, targets, 0)
    np.put_along_axis(q, safe[..., None], np.take_along_axis(q, safe[..., None], -1) + (1.0 - eps), axis=-1)
    q *= weights[..., None]
    return ops.scale(ops.sum(ops.mul(logp, q), axis=(1, 2)), -1.0)


def token_logprob(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Unsmoothed sum of log P(target) over weighted positions, no graph."""
    x = logits.data
    z = x - x.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    safe = np.where(weights > 0, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], -1)[..., 0]
    return (picked * weights).sum(-1)


def pad_ids(seqs, fill: int) -> tuple[np.ndarray, np.ndarray]:
    length = max(1, max((len(s) for s in seqs), default=1))
    out = np.full((len(seqs), length), fill, dtype=np.int64)
    valid = np.zeros((len(seqs), length), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        valid[i, : len(s)] = True
    return out, valid


def ctc_targets(batch) -> tuple[np.ndarray, np.ndarray]:
    return np.where(batch.targets >= 0, batch.targets, 0), batch.target_lengths


def feasible_rows(per_utt_loss: np.ndarray) -> np.ndarray:
    """Indices of rows to train on: infeasible (+inf) rows are skipped, NaN rows are kept so they surface.

    An all-infeasible batch keeps every row, which makes the loss non-finite.
    """
    ok = np.flatnonzero(~np.isposinf(per_utt_loss))
    return ok if len(ok) else np.arange(len(per_utt_loss))
