"""Error rates and alignment-length diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ctc.align import collapse
from .ctc.types import Alignment
from .errors import ContractError


def edit_ops(ref, hyp) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) of a minimum-cost edit script.

    Among scripts of equal cost the one with the most substitutions wins, so
    a substitution is never split into a deletion plus an insertion.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    # each cell: (cost, -subs, subs, dels, ins); tuples compare lexicographically
    prev = [(j, 0, 0, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, 0, i, 0)]
        for j in range(1, m + 1):
            c, ns, s, d, k = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                diag = (c, ns, s, d, k)
            else:
                diag = (c + 1, ns - 1, s + 1, d, k)
            c, ns, s, d, k = prev[j]
            up = (c + 1, ns, s, d + 1, k)
            c, ns, s, d, k = cur[j - 1]
            left = (c + 1, ns, s, d, k + 1)
            cur.append(min(diag, up, left))
        prev = cur
    _, _, s, d, k = prev[m]
    return s, d, k


def wer(ref, hyp) -> dict:
    s, d, i = edit_ops(ref, hyp)
    return {"errors": {"sub": s, "del": d, "ins": i}, "rate": (s + d + i) / max(len(ref), 1)}


def corpus_wer(pairs) -> dict:
    """Pooled rate over (ref, hyp) pairs: total errors over total reference tokens."""
    tot = {"sub": 0, "del": 0, "ins": 0}
    words = 0
    for ref, hyp in pairs:
        for k, v in wer(ref, hyp)["errors"].items():
            tot[k] += v
        words += len(ref)
    return {"errors": tot, "rate": sum(tot.values()) / max(words, 1), "ref_tokens": words}


def _tokens(x, blank: int) -> list[int]:
    if isinstance(x, Alignment):
        return collapse(x, blank)
    return list(x)


def mismatch_counts(candidate, oracle, blank: int = 0) -> tuple[int, int]:
    """(deletions + insertions, oracle length) between the two collapsed sequences."""
    c, o = _tokens(candidate, blank), _tokens(oracle, blank)
    _, d, i = edit_ops(o, c)
    return d + i, len(o)


def mismatch_rate(candidate, oracle, blank: int = 0) -> float:
    """Deletions plus insertions relative to the oracle; substitutions do not count.

    Alignments are collapsed first; plain token lists are used as they are.
    """
    e, n = mismatch_counts(candidate, oracle, blank)
    return e / max(n, 1)


def corpus_mismatch_rate(candidates: dict, oracles: dict, blank: int = 0, per_utterance: bool = False) -> float:
    _check_paired(candidates, oracles)
    counts = [mismatch_counts(candidates[k], oracles[k], blank) for k in sorted(oracles)]
    if not counts:
        return 0.0
    if per_utterance:
        return float(np.mean([e / max(n, 1) for e, n in counts]))
    return sum(e for e, _ in counts) / max(sum(n for _, n in counts), 1)


def _check_paired(a: dict, b: dict) -> None:
    if set(a) != set(b):
        missing = sorted(set(a) ^ set(b))[:5]
        raise ContractError(f"unpaired utterance ids: {missing}")


@dataclass
class AlignmentDiagnostics:
    mr: float
    lper: float
    length_error_hist: dict[int, dict] = field(default_factory=dict)

    def hist_rows(self) -> list[dict]:
        return [{"delta": k, **v} for k, v in sorted(self.length_error_hist.items())]


def lper(candidates: dict, oracles: dict, refs: dict | None = None, hyps: dict | None = None,
         blank: int = 0, per_utterance_mr: bool = False) -> AlignmentDiagnostics:
    """Share of utterances whose candidate length differs from the oracle's.

    The histogram is keyed by the signed difference len(candidate) -
    len(oracle); with ``refs``/``hyps`` each bucket also gets its pooled WER.
    """
    _check_paired(candidates, oracles)
    hist: dict[int, dict] = {}
    pairs: dict[int, list] = {}
    for k in sorted(oracles):
        delta = len(_tokens(candidates[k], blank)) - len(_tokens(oracles[k], blank))
        bucket = hist.setdefault(delta, {"count": 0, "wer": None})
        bucket["count"] += 1
        if refs is not None and hyps is not None:
            pairs.setdefault(delta, []).append((refs[k], hyps[k]))
    for delta, ps in pairs.items():
        hist[delta]["wer"] = corpus_wer(ps)["rate"]
    n = len(oracles)
    rate = 0.0 if n == 0 else 1.0 - hist.get(0, {"count": 0})["count"] / n
    mr = corpus_mismatch_rate(candidates, oracles, blank, per_utterance_mr)
    return AlignmentDiagnostics(mr, rate, hist)


def report(refs: dict, hyps: dict, candidates: dict | None = None, oracles: dict | None = None,
           timing: dict | None = None, blank: int = 0, per_utterance_mr: bool = False) -> dict:
    """Metrics report: {wer, sub, del, ins, mr, lper, hist, timing}."""
    _check_paired(refs, hyps)
    w = corpus_wer([(refs[k], hyps[k]) for k in sorted(refs)])
    out = {"wer": w["rate"], "sub": w["errors"]["sub"], "del": w["errors"]["del"], "ins": w["errors"]["ins"],
           "mr": None, "lper": None, "hist": [], "timing": timing or {}}
    if candidates is not None and oracles is not None:
        diag = lper(candidates, oracles, refs, hyps, blank, per_utterance_mr)
        out.update(mr=diag.mr, lper=diag.lper, hist=diag.hist_rows())
    return out
