"""Inference: alignment generation (oracle, BPA, BSA, ESA), decoding, ranking and corpus runs."""

from __future__ import annotations

import json
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ctc import (
    Alignment,
    EsaConfig,
    Vocabulary,
    beam_search_align,
    best_path_align,
    collapse,
    esa_sample,
    viterbi_align,
)
from .data import Corpus, Utterance
from .errors import ContractError
from .metrics import report
from .numcore import no_grad

METHODS = ("oracle", "bpa", "bsa", "esa", "ctc", "at")


@dataclass(frozen=True)
class DecodeParams:
    method: str = "esa"
    tau: float = 0.9
    samples: int = 50
    seed: int = 0
    beam: int = 4  # prefix-search width for BSA
    at_beam: int = 10  # beam width when decoding with the AT model itself
    rank_alignments: bool = False  # score collapse(alignment) instead of the decoded hypothesis

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}; expected one of {METHODS}")

    def esa(self, utt_id: str = "") -> EsaConfig:
        # per-utterance stream, independent of processing order
        return EsaConfig(self.tau, self.samples, self.seed * 1_000_003 + zlib.crc32(utt_id.encode()))


@dataclass
class DecodeResult:
    utt_id: str
    hypothesis: list[int]
    source: str
    alignment: list[int]
    score: float | None = None
    candidate_scores: list[tuple[float, float]] = field(default_factory=list)
    wall_time_s: float = 0.0
    num_unique: int = 1


def decode_with_alignment(model, features: np.ndarray, alignment, enc=None) -> list[int]:
    """Decoder argmax under one fixed alignment over encoder frames; EOS and the rest are dropped."""
    enc = enc if enc is not None else model.encode(features)
    ids = alignment.ids if isinstance(alignment, Alignment) else np.asarray(alignment)
    return model.decode_alignments(enc, [ids])[0][0]


def _dedup(items, key):
    index: dict = {}
    unique = []
    slot = []
    for it in items:
        k = key(it)
        if k not in index:
            index[k] = len(unique)
            unique.append(it)
        slot.append(index[k])
    return unique, slot


def decode_esa(model, scorer, features: np.ndarray, cfg: EsaConfig, utt_id: str = "",
               rank_alignments: bool = False, enc=None) -> DecodeResult:
    """Sample alignments, decode the distinct ones in one batch and keep the best-scored hypothesis.

    Ties on the ranking score go to the earliest sample.
    """
    enc = enc if enc is not None else model.encode(features)
    vocab_blank = model.cfg.blank_id
    samples = esa_sample(enc.ctc_logits.data[0], cfg)
    unique, slot = _dedup(samples, lambda a: a.key())
    hyps, conf = model.decode_alignments(enc, [a.ids for a in unique])
    texts = [collapse(a, vocab_blank) for a in unique] if rank_alignments else hyps
    distinct, hslot = _dedup(texts, tuple)
    scores = scorer.score(features, distinct)
    per_unique = np.array([scores[h] for h in hslot])
    per_sample = per_unique[np.array(slot)]
    best = int(np.argmax(per_sample))
    u = slot[best]
    return DecodeResult(utt_id, hyps[u], "esa", unique[u].ids.tolist(), float(per_sample[best]),
                        [(float(conf[s]), float(per_unique[s])) for s in slot], num_unique=len(unique))


def model_vocab(model) -> Vocabulary:
    cfg = model.cfg
    return Vocabulary(tuple(str(i) for i in range(cfg.vocab_size)), blank_id=cfg.blank_id, eos_id=cfg.eos_id)


def oracle_alignment(model, enc, ref) -> Alignment:
    if ref is None:
        raise ContractError("oracle alignment needs a reference transcript")
    return viterbi_align(enc.ctc_logits.data[0], ref, model_vocab(model))


def decode_utterance(model, scorer, utt: Utterance, features: np.ndarray, params: DecodeParams) -> DecodeResult:
    start = time.perf_counter()
    m = params.method
    if m == "at":
        hyp = model.decode(features, beam=params.at_beam)
        res = DecodeResult(utt.utt_id, hyp.tokens, m, [], hyp.score)
    else:
        enc = model.encode(features)
        logits = enc.ctc_logits.data[0]
        if m == "esa":
            res = decode_esa(model, scorer, features, params.esa(utt.utt_id), utt.utt_id, params.rank_alignments, enc)
        else:
            if m == "oracle":
                ali = oracle_alignment(model, enc, utt.transcript)
            elif m == "bsa":
                ali = beam_search_align(logits, params.beam, model_vocab(model))
            else:
                ali = best_path_align(logits)
            if m == "ctc":
                hyp = [t for t in collapse(ali, model.cfg.blank_id) if t != model.cfg.eos_id]
            else:
                hyp = decode_with_alignment(model, features, ali, enc)
            res = DecodeResult(utt.utt_id, hyp, m, ali.ids.tolist())
    res.wall_time_s = time.perf_counter() - start
    return res


def decode_corpus(model, scorer, corpus: Corpus, split: str, params: DecodeParams, threads: int = 1,
                  baseline_time: float | None = None, limit: int | None = None) -> tuple[list[DecodeResult], dict]:
    """Decode a split utterance by utterance (batch size one) and summarize.

    MR and LPER compare each result's alignment with the Viterbi alignment
    of the reference under the same model's CTC output; AT results carry no
    alignment and leave them empty.
    """
    utts = corpus[split][:limit] if limit else corpus[split]
    if params.method == "esa" and scorer is None:
        raise ContractError("ESA needs a scorer")
    model.eval()
    if scorer is not None:
        scorer.eval()

    def run(u):
        return decode_utterance(model, scorer, u, corpus.normalize(u.features), params)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, utts))
    else:
        results = [run(u) for u in utts]

    refs = {u.utt_id: list(u.transcript) for u in utts}
    hyps = {r.utt_id: r.hypothesis for r in results}
    timing = {"mean_time": float(np.mean([r.wall_time_s for r in results])) if results else 0.0}
    cands = oracles = None
    if params.method != "at":
        cands = {r.utt_id: Alignment(r.alignment) for r in results}
        oracles = {}
        for u in utts:
            enc = model.encode(corpus.normalize(u.features))
            oracles[u.utt_id] = oracle_alignment(model, enc, u.transcript)
    rep = report(refs, hyps, cands, oracles, timing, model.cfg.blank_id)
    summary = {"method": params.method, "n": len(results), **rep, "mean_time": timing["mean_time"],
               "speedup_vs_baseline": (baseline_time / timing["mean_time"]) if baseline_time else None,
               "params": asdict(params)}
    return results, summary


def write_results(out_dir, results: list[DecodeResult], summary: dict, corpus: Corpus, method: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    refs = {u.utt_id: u.transcript for s in corpus.splits.values() for u in s}
    with open(out / "results.jsonl", "w") as f:
        for r in sorted(results, key=lambda r: r.utt_id):
            f.write(json.dumps({"utt_id": r.utt_id, "method": method, "hypothesis": r.hypothesis,
                                "ref": refs.get(r.utt_id), "alignment": r.alignment, "score": r.score,
                                "wall_time_s": r.wall_time_s}) + "\n")
    (out / "summary.json").write_text(json.dumps(summary, indent=1))


LEVELS = ("taee", "sad", "mad")


def token_embedding_sums(model, corpus: Corpus, utts, level: str) -> tuple[dict[int, np.ndarray], dict[int, int]]:
    """Per-token sums and counts of one decoder level's outputs under oracle alignments.

    Kept as sums so that disjoint shards can be merged before averaging.
    """
    if level not in LEVELS:
        raise ContractError(f"level must be one of {LEVELS}")
    model.eval()
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    eos = model.cfg.eos_id
    for u in utts:
        enc = model.encode(corpus.normalize(u.features))
        ali = oracle_alignment(model, enc, u.transcript)
        with no_grad():
            dec = model.decode_from_encoder(enc, [ali.ids])
        x = {"taee": dec.taes, "sad": dec.sad_out, "mad": dec.mad_out}[level].data[0]
        for pos, tok in enumerate(list(u.transcript) + [eos]):
            sums[tok] = sums.get(tok, 0.0) + x[pos]
            counts[tok] = counts.get(tok, 0) + 1
    return sums, counts


def merge_embedding_sums(*parts):
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for s, c in parts:
        for k in s:
            sums[k] = sums.get(k, 0.0) + s[k]
            counts[k] = counts.get(k, 0) + c[k]
    return sums, counts


def embedding_records(sums, counts, vocab: Vocabulary) -> list[dict]:
    return [{"token": vocab.tokens[k], "id": int(k), "count": counts[k], "vector": (sums[k] / counts[k]).tolist()}
            for k in sorted(sums)]
