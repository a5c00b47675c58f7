"""Alignments over the CTC output space and the trigger masks derived from them."""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..errors import ContractError, InfeasibleError
from ..numcore import Tensor
from .loss import _check_target, batch_extended, is_feasible, required_frames
from .types import Alignment, EsaConfig, TriggerMask, Vocabulary


def _as_array(logits) -> np.ndarray:
    return logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _blank(vocab_or_blank) -> int:
    return vocab_or_blank.blank_id if isinstance(vocab_or_blank, Vocabulary) else int(vocab_or_blank)


def collapse(alignment, vocab: Vocabulary | int = 0) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    ids = alignment.ids if isinstance(alignment, Alignment) else np.asarray(alignment).reshape(-1)
    blank = _blank(vocab)
    out = []
    prev = None
    for z in ids.tolist():
        if z != prev and z != blank:
            out.append(z)
        prev = z
    return out


def token_starts(alignment, vocab: Vocabulary | int = 0) -> list[int]:
    """Frame at which each collapsed token's run begins."""
    ids = alignment.ids if isinstance(alignment, Alignment) else np.asarray(alignment).reshape(-1)
    blank = _blank(vocab)
    starts = []
    prev = None
    for t, z in enumerate(ids.tolist()):
        if z != prev and z != blank:
            starts.append(t)
        prev = z
    return starts


def best_path_align(logits) -> Alignment:
    """Per-frame argmax; ties go to the lowest index, so blank (id 0) wins them."""
    x = _as_array(logits)
    ids = np.argmax(x, axis=-1)
    logp = log_softmax_np(x)
    return Alignment(ids, logp[np.arange(len(ids)), ids])


def viterbi_batch(logp: np.ndarray, frame_lengths, targets, target_lengths, blank_id: int) -> list[np.ndarray | None]:
    """Most probable alignment of each padded row; ``None`` for infeasible rows.

    Backtrace ties prefer staying in the same state, then the previous
    state, then the skip; at the end the trailing blank wins ties.
    """
    logp = np.asarray(logp, dtype=np.float64)
    bsz, t_max, _ = logp.shape
    frame_lengths = np.asarray(frame_lengths, dtype=np.int64)
    target_lengths = np.asarray(target_lengths, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64).reshape(bsz, -1)
    ext, skip, valid = batch_extended(targets, target_lengths, blank_id)
    s = ext.shape[1]
    emit = np.take_along_axis(logp, np.broadcast_to(ext[:, None, :], (bsz, t_max, s)), axis=2)
    emit = np.where(valid[:, None, :], emit, -np.inf)
    skip_bias = np.where(skip, 0.0, -np.inf)

    back = np.zeros((bsz, t_max, s), dtype=np.int8)
    delta = np.full((bsz, s), -np.inf)
    delta[:, :2] = emit[:, 0, :2]
    history = [delta]
    for t in range(1, t_max):
        stay = delta
        from_prev = np.full_like(delta, -np.inf)
        from_prev[:, 1:] = delta[:, :-1]
        from_skip = np.full_like(delta, -np.inf)
        from_skip[:, 2:] = delta[:, :-2]
        from_skip = from_skip + skip_bias
        cand = np.stack([stay, from_prev, from_skip])
        arg = np.argmax(cand, axis=0)
        step = np.take_along_axis(cand, arg[None], axis=0)[0] + emit[:, t]
        active = (t < frame_lengths)[:, None]
        back[:, t] = np.where(active, arg, 0)
        delta = np.where(active, step, delta)
        history.append(delta)

    out: list[np.ndarray | None] = []
    for b in range(bsz):
        u = int(target_lengths[b])
        length = int(frame_lengths[b])
        if not is_feasible(length, targets[b, :u]):
            out.append(None)
            continue
        final = history[length - 1][b]
        state = 2 * u
        if u > 0 and final[2 * u - 1] > final[2 * u]:
            state = 2 * u - 1
        path = np.empty(length, dtype=np.int64)
        for t in range(length - 1, -1, -1):
            path[t] = ext[b, state]
            state -= int(back[b, t, state])
        out.append(path)
    return out


def viterbi_align(logits, target, vocab: Vocabulary) -> Alignment:
    """Most probable alignment that collapses to ``target``."""
    x = _as_array(logits)
    target = _check_target(target, vocab.blank_id)
    if not is_feasible(x.shape[0], target):
        raise InfeasibleError(f"{len(target)} tokens need {required_frames(target)} frames, got {x.shape[0]}")
    logp = log_softmax_np(x)
    (path,) = viterbi_batch(logp[None], [x.shape[0]], target[None], [len(target)], vocab.blank_id)
    return Alignment(path, logp[np.arange(len(path)), path])


def prefix_beam_search(logits, beam_width: int, vocab: Vocabulary) -> list[tuple[tuple[int, ...], float]]:
    """CTC prefix beam search; returns (prefix, log-probability) pairs, best first.

    Each prefix score sums the probabilities of every path collapsing to it.
    """
    if beam_width < 1:
        raise ContractError("beam_width must be >= 1")
    logp = log_softmax_np(_as_array(logits))
    blank = vocab.blank_id
    symbols = [i for i in range(logp.shape[1]) if i != blank]
    # prefix -> (log P ending in blank, log P ending in non-blank)
    beam: dict[tuple[int, ...], tuple[float, float]] = {(): (0.0, -np.inf)}
    for frame in logp:
        nxt: dict[tuple[int, ...], list[float]] = defaultdict(lambda: [-np.inf, -np.inf])
        for prefix, (pb, pnb) in beam.items():
            total = np.logaddexp(pb, pnb)
            entry = nxt[prefix]
            entry[0] = np.logaddexp(entry[0], total + frame[blank])
            last = prefix[-1] if prefix else None
            for c in symbols:
                ext = prefix + (c,)
                target = nxt[ext]
                if c == last:
                    target[1] = np.logaddexp(target[1], pb + frame[c])
                    entry[1] = np.logaddexp(entry[1], pnb + frame[c])
                else:
                    target[1] = np.logaddexp(target[1], total + frame[c])
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
        ranked = [kv for kv in ranked if np.logaddexp(*kv[1]) > -np.inf] or ranked[:1]
        beam = {k: (v[0], v[1]) for k, v in ranked[:beam_width]}
    return [(k, float(np.logaddexp(*v))) for k, v in beam.items()]


def beam_search_align(logits, beam_width: int, vocab: Vocabulary) -> Alignment:
    """Forced alignment of the best collapsed sequence found by prefix beam search.

    Width 1 keeps no alternatives to sum over, so it reduces to the greedy
    best path.
    """
    if beam_width < 1:
        raise ContractError("beam_width must be >= 1")
    if beam_width == 1:
        best = collapse(best_path_align(logits), vocab)
    else:
        best = list(prefix_beam_search(logits, beam_width, vocab)[0][0])
    return viterbi_align(logits, best, vocab)


def top2(logits) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-1 ids, top-2 ids and top-1 probabilities per frame (lowest index wins ties)."""
    x = _as_array(logits)
    probs = np.exp(log_softmax_np(x))
    order = np.argsort(-probs, axis=-1, kind="stable")
    first, second = order[:, 0], order[:, 1]
    return first, second, probs[np.arange(len(first)), first]


def esa_sample(logits, cfg: EsaConfig, rng: np.random.Generator | None = None) -> list[Alignment]:
    """Sample ``cfg.num_samples`` alignments around the best path.

    Frames whose top-1 probability exceeds ``tau`` keep the argmax; the
    others pick top-1 or top-2 with equal probability.
    """
    first, second, p1 = top2(logits)
    logp = log_softmax_np(_as_array(logits))
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    unsure = np.flatnonzero(p1 <= cfg.tau)
    flips = rng.integers(0, 2, size=(cfg.num_samples, len(unsure))).astype(bool)
    out = []
    frames = np.arange(len(first))
    for row in flips:
        ids = first.copy()
        ids[unsure[row]] = second[unsure[row]]
        out.append(Alignment(ids, logp[frames, ids]))
    return out


def trigger_mask(alignment, expansion: int = 0, num_frames: int | None = None, vocab: Vocabulary | int = 0) -> TriggerMask:
    """Map an alignment to token segments.

    Token u covers the frames after the previous token's start up to and
    including the frame where its own run starts. The EOS row takes the
    frames after the last token start (possibly none). ``expansion`` widens
    every non-empty row by that many frames on each side.
    """
    if expansion < 0:
        raise ContractError("expansion must be >= 0")
    ids = alignment.ids if isinstance(alignment, Alignment) else np.asarray(alignment).reshape(-1)
    t = len(ids) if num_frames is None else num_frames
    starts = token_starts(ids, vocab)
    rows = np.zeros((len(starts) + 1, t), dtype=bool)
    lo = 0
    for u, end in enumerate(starts):
        rows[u, max(0, lo - expansion) : min(t, end + 1 + expansion)] = True
        lo = end + 1
    if lo < t:
        rows[-1, max(0, lo - expansion) :] = True
    return TriggerMask(rows, starts, expansion)


# -- alignment dump (JSON lines) ---------------------------------------------------


def alignment_record(utt_id: str, alignment: Alignment, vocab: Vocabulary) -> dict:
    return {
        "utt_id": utt_id,
        "alignment": alignment.ids.tolist(),
        "boundaries": token_starts(alignment, vocab),
        "collapse": collapse(alignment, vocab),
        "logprob": alignment.logprob(),
    }


def write_alignments(path, records) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def read_alignments(path) -> dict[str, Alignment]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            out[rec["utt_id"]] = Alignment(rec["alignment"])
    return out
