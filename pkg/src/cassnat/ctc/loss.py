"""CTC likelihood: a graph-recorded forward recursion and a fused forward-backward op.

Both work over the blank-interleaved state sequence (blank, y1, blank, ...,
yU, blank) of length 2U + 1 in log space.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, InfeasibleError
from ..numcore import Tensor, make_node, ops
from .types import Vocabulary


def required_frames(target) -> int:
    """Minimum number of frames that can emit ``target`` (one blank between repeats)."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def is_feasible(num_frames: int, target) -> bool:
    return num_frames >= required_frames(target)


def _check_target(target, blank_id: int) -> np.ndarray:
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    if (target == blank_id).any():
        raise ContractError("CTC target contains the blank id")
    return target


def _extended(target: np.ndarray, blank_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Interleaved state labels and a flag marking states reachable by skipping a blank."""
    s = 2 * len(target) + 1
    ext = np.full(s, blank_id, dtype=np.int64)
    ext[1::2] = target
    skip = np.zeros(s, dtype=bool)
    if len(target) > 1:
        skip[3::2] = target[1:] != target[:-1]
    return ext, skip


def ctc_logprob(logits: Tensor, target, vocab: Vocabulary) -> Tensor:
    """log P(target | frames), recorded op by op so autodiff can run through it.

    ``logits`` is T x V (unnormalized). An infeasible target yields a constant
    ``-inf`` tensor; check :func:`is_feasible` first if that matters.
    """
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    target = _check_target(target, vocab.blank_id)
    t_len = logits.shape[0]
    if not is_feasible(t_len, target):
        return Tensor(np.array(-np.inf))

    ext, skip = _extended(target, vocab.blank_id)
    s = len(ext)
    logp = ops.log_softmax(logits, axis=-1)
    emit = ops.take(logp, (slice(None), ext))  # T x S

    init = np.full(s, -np.inf)
    init[: min(2, s)] = 0.0
    alpha = ops.add(emit[0], init)
    no_skip = np.where(skip, 0.0, -np.inf)
    pad1 = Tensor(np.full(1, -np.inf))
    pad2 = Tensor(np.full(2, -np.inf))
    for t in range(1, t_len):
        from_prev = ops.concat([pad1, alpha[: s - 1]]) if s > 1 else Tensor(np.full(1, -np.inf))
        if s > 2:
            from_skip = ops.add(ops.concat([pad2, alpha[: s - 2]]), no_skip)
        else:
            from_skip = Tensor(np.full(s, -np.inf))
        alpha = ops.add(ops.logsumexp(ops.stack([alpha, from_prev, from_skip]), axis=0), emit[t])
    if s == 1:
        return ops.reshape(alpha, ())
    return ops.logsumexp(alpha[s - 2 :], axis=0)


# -- vectorized forward-backward over a padded batch ------------------------------


def _lse3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    m = np.maximum(np.maximum(a, b), c)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - m_safe) + np.exp(b - m_safe) + np.exp(c - m_safe)) + m_safe


def _shift(x: np.ndarray, k: int, fill=-np.inf) -> np.ndarray:
    """Shift along the last axis: out[..., s] = x[..., s - k] (k may be negative)."""
    out = np.full_like(x, fill)
    if k > 0:
        out[..., k:] = x[..., :-k]
    elif k < 0:
        out[..., :k] = x[..., -k:]
    else:
        out[...] = x
    return out


def batch_extended(targets: np.ndarray, target_lengths: np.ndarray, blank_id: int):
    bsz, umax = targets.shape
    s = 2 * umax + 1
    ext = np.full((bsz, s), blank_id, dtype=np.int64)
    ext[:, 1::2] = np.where(np.arange(umax)[None, :] < target_lengths[:, None], targets, blank_id)
    skip = np.zeros((bsz, s), dtype=bool)
    if umax > 1:
        skip[:, 3::2] = ext[:, 3::2] != ext[:, 1:-2:2]
    valid = np.arange(s)[None, :] < (2 * target_lengths + 1)[:, None]
    return ext, skip, valid


def forward_backward(logp: np.ndarray, frame_lengths, targets, target_lengths, blank_id: int):
    """Log-space alphas, betas and log-likelihoods.

    ``logp`` is B x T x V log-probabilities; ``targets`` is B x Umax, padded.
    Returns (alpha, beta, loglik, ext) where alpha/beta are B x T x S and both
    include the emission at their own frame. Infeasible rows get ``-inf``.
    """
    bsz, t_max, _ = logp.shape
    frame_lengths = np.asarray(frame_lengths, dtype=np.int64)
    target_lengths = np.asarray(target_lengths, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64).reshape(bsz, -1)
    ext, skip, valid = batch_extended(targets, target_lengths, blank_id)
    s = ext.shape[1]
    emit = np.take_along_axis(logp, np.broadcast_to(ext[:, None, :], (bsz, t_max, s)), axis=2)
    emit = np.where(valid[:, None, :], emit, -np.inf)
    skip_bias = np.where(skip, 0.0, -np.inf)

    alpha = np.full((bsz, t_max, s), -np.inf)
    alpha[:, 0, :2] = emit[:, 0, :2]
    for t in range(1, t_max):
        prev = alpha[:, t - 1]
        step = _lse3(prev, _shift(prev, 1), _shift(prev, 2) + skip_bias) + emit[:, t]
        alpha[:, t] = np.where((t < frame_lengths)[:, None], step, prev)

    last_blank = 2 * target_lengths
    rows = np.arange(bsz)
    final = alpha[rows, frame_lengths - 1]
    end_a = final[rows, last_blank]
    end_b = np.where(target_lengths > 0, final[rows, np.maximum(last_blank - 1, 0)], -np.inf)
    loglik = np.logaddexp(end_a, end_b)

    beta = np.full((bsz, t_max, s), -np.inf)
    init = np.full((bsz, s), -np.inf)
    init[rows, last_blank] = 0.0
    has_label = target_lengths > 0
    init[rows[has_label], last_blank[has_label] - 1] = 0.0
    skip_next = _shift(skip_bias, -2)  # may jump s -> s+2 iff state s+2 allows skipping
    nxt = np.full((bsz, s), -np.inf)
    for t in range(t_max - 1, -1, -1):
        rec = _lse3(nxt, _shift(nxt, -1), _shift(nxt, -2) + skip_next)
        here = np.where((t == frame_lengths - 1)[:, None], init, rec) + emit[:, t]
        here = np.where((t < frame_lengths)[:, None], here, -np.inf)
        beta[:, t] = here
        nxt = here
    return alpha, beta, loglik, ext


def occupancy(logp, frame_lengths, targets, target_lengths, blank_id):
    """Per-frame posterior of each vocabulary symbol under the CTC target, B x T x V."""
    alpha, beta, loglik, ext = forward_backward(logp, frame_lengths, targets, target_lengths, blank_id)
    bsz, t_max, v = logp.shape
    emit = np.take_along_axis(logp, np.broadcast_to(ext[:, None, :], alpha.shape), axis=2)
    with np.errstate(invalid="ignore"):
        log_gamma = alpha + beta - emit - loglik[:, None, None]
    gamma = np.where(np.isfinite(log_gamma), np.exp(log_gamma), 0.0)
    onehot = np.zeros((bsz, ext.shape[1], v))
    np.put_along_axis(onehot, ext[:, :, None], 1.0, axis=2)
    return gamma @ onehot, loglik


def ctc_loss(logits: Tensor, frame_lengths, targets, target_lengths, blank_id: int) -> Tensor:
    """Fused per-utterance negative log-likelihood, B values, with the analytic gradient.

    Infeasible rows are ``inf`` and receive no gradient; callers filter them.
    """
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    occ, loglik = occupancy(logp, frame_lengths, targets, target_lengths, blank_id)
    frame_mask = (np.arange(logp.shape[1])[None, :] < np.asarray(frame_lengths)[:, None])[:, :, None]
    ok = np.isfinite(loglik)[:, None, None]
    local = np.where(frame_mask & ok, np.exp(logp) - occ, 0.0)

    def back(g):
        return (g[:, None, None] * local,)

    return make_node(-loglik, (logits,), back, "ctc_loss")


def ctc_grad_oracle(logits, target, vocab: Vocabulary) -> np.ndarray:
    """Analytic d(-log P(target))/d(logits) for one T x V utterance."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    target = _check_target(target, vocab.blank_id)
    if not is_feasible(data.shape[0], target):
        raise InfeasibleError(f"{len(target)} tokens need {required_frames(target)} frames, got {data.shape[0]}")
    z = data - data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    occ, _ = occupancy(logp[None], [data.shape[0]], target[None], [len(target)], vocab.blank_id)
    return np.exp(logp) - occ[0]
