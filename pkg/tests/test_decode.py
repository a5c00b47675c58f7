import json
from dataclasses import replace

import numpy as np
import pytest

from cassnat.ctc import EsaConfig, best_path_align, collapse, esa_sample
from cassnat.decode import (
    DecodeParams,
    decode_corpus,
    decode_esa,
    decode_utterance,
    decode_with_alignment,
    embedding_records,
    merge_embedding_sums,
    token_embedding_sums,
    write_results,
)
from cassnat.errors import ContractError
from cassnat.models import build_model

from conftest import tiny_config


@pytest.fixture(scope="module")
def pair(tiny_corpus):
    cfg = tiny_config(tiny_corpus)
    return build_model("cassnat", cfg, 0).eval(), build_model("at", cfg, 1).eval()


def feats(corpus, i=0, split="dev"):
    return corpus.normalize(corpus[split][i].features)


def test_hypotheses_never_hold_blank_or_eos(tiny_corpus, pair):
    model, scorer = pair
    cfg = model.cfg
    for method in ("oracle", "bpa", "bsa", "esa", "ctc"):
        results, _ = decode_corpus(model, scorer, tiny_corpus, "dev", DecodeParams(method=method, samples=5))
        for r in results:
            assert cfg.blank_id not in r.hypothesis and cfg.eos_id not in r.hypothesis


def test_empty_collapse_alignment_gives_empty_hypothesis(tiny_corpus, pair):
    model, _ = pair
    x = feats(tiny_corpus)
    t = model.encode(x).h.shape[1]
    assert decode_with_alignment(model, x, np.zeros(t, dtype=int)) == []


def test_decode_with_alignment_deterministic(tiny_corpus, pair):
    model, _ = pair
    x = feats(tiny_corpus, 1)
    ali = best_path_align(model.encode(x).ctc_logits.data[0])
    assert decode_with_alignment(model, x, ali) == decode_with_alignment(model, x, ali)


def test_esa_degenerate_equals_bpa(tiny_corpus, pair):
    model, scorer = pair
    for i in range(4):
        x = feats(tiny_corpus, i)
        res = decode_esa(model, scorer, x, EsaConfig(tau=1e-6, num_samples=10, seed=i))
        ali = best_path_align(model.encode(x).ctc_logits.data[0])
        assert res.alignment == ali.ids.tolist()
        assert res.hypothesis == decode_with_alignment(model, x, ali)
        assert res.num_unique == 1 and len(res.candidate_scores) == 10


def test_esa_generates_and_scores_s_candidates(tiny_corpus, pair):
    model, scorer = pair
    x = feats(tiny_corpus, 2)
    res = decode_esa(model, scorer, x, EsaConfig(tau=1.0, num_samples=17, seed=0))
    assert len(res.candidate_scores) == 17
    assert res.score == max(s for _, s in res.candidate_scores)
    # the winner is the earliest candidate with the top score
    first = [s for _, s in res.candidate_scores].index(res.score)
    assert res.candidate_scores[first][1] == res.score
    assert decode_with_alignment(model, x, np.array(res.alignment)) == res.hypothesis
    assert scorer.score(x, [res.hypothesis])[0] == pytest.approx(res.score, abs=1e-9)


def test_esa_selection_matches_bruteforce_ranking(tiny_corpus, pair):
    model, scorer = pair
    x = feats(tiny_corpus, 3)
    cfg = EsaConfig(tau=1.0, num_samples=12, seed=5)
    res = decode_esa(model, scorer, x, cfg)
    samples = esa_sample(model.encode(x).ctc_logits.data[0], cfg)
    hyps = [decode_with_alignment(model, x, a) for a in samples]
    scores = [scorer.score(x, [h])[0] for h in hyps]
    best = int(np.argmax(scores))
    assert res.hypothesis == hyps[best]
    np.testing.assert_allclose([s for _, s in res.candidate_scores], scores, atol=1e-9)


def test_esa_single_sample_reproducible(tiny_corpus, pair):
    model, scorer = pair
    x = feats(tiny_corpus, 0)
    a = decode_esa(model, scorer, x, EsaConfig(0.9, 1, 3))
    b = decode_esa(model, scorer, x, EsaConfig(0.9, 1, 3))
    assert a.alignment == b.alignment and a.hypothesis == b.hypothesis


def test_rank_alignments_scores_collapsed_alignment(tiny_corpus, pair):
    model, scorer = pair
    x = feats(tiny_corpus, 1)
    res = decode_esa(model, scorer, x, EsaConfig(1.0, 8, 0), rank_alignments=True)
    assert scorer.score(x, [collapse(res.alignment, model.cfg.blank_id)])[0] == pytest.approx(res.score, abs=1e-9)


def test_stored_alignment_reproduces_hypothesis(tiny_corpus, pair):
    model, scorer = pair
    for method in ("oracle", "bpa", "bsa", "esa"):
        results, _ = decode_corpus(model, scorer, tiny_corpus, "dev", DecodeParams(method=method, samples=4))
        for r, u in zip(results, tiny_corpus["dev"]):
            x = tiny_corpus.normalize(u.features)
            assert decode_with_alignment(model, x, np.array(r.alignment)) == r.hypothesis


def test_oracle_alignment_collapses_to_reference(tiny_corpus, pair):
    model, scorer = pair
    results, summary = decode_corpus(model, scorer, tiny_corpus, "dev", DecodeParams(method="oracle"))
    for r, u in zip(results, tiny_corpus["dev"]):
        assert collapse(r.alignment, 0) == u.transcript
    assert summary["mr"] == 0.0 and summary["lper"] == 0.0


def test_oracle_needs_reference(tiny_corpus, pair):
    model, scorer = pair
    u = replace(tiny_corpus["dev"][0], transcript=None)
    with pytest.raises(ContractError):
        decode_utterance(model, scorer, u, tiny_corpus.normalize(u.features), DecodeParams(method="oracle"))


def test_esa_requires_scorer(tiny_corpus, pair):
    with pytest.raises(ContractError):
        decode_corpus(pair[0], None, tiny_corpus, "dev", DecodeParams(method="esa"))


def test_unknown_method_rejected():
    with pytest.raises(ContractError):
        DecodeParams(method="nope")


def test_same_seed_same_hypotheses_and_threads_are_order_stable(tiny_corpus, pair):
    model, scorer = pair
    p = DecodeParams(method="esa", samples=6, seed=2)
    a, sa = decode_corpus(model, scorer, tiny_corpus, "dev", p)
    b, sb = decode_corpus(model, scorer, tiny_corpus, "dev", p, threads=3)
    assert [r.utt_id for r in a] == [r.utt_id for r in b]
    assert [r.hypothesis for r in a] == [r.hypothesis for r in b]
    assert sa["wer"] == sb["wer"]


def test_summary_and_results_files(tiny_corpus, pair, tmp_path):
    model, scorer = pair
    results, summary = decode_corpus(model, scorer, tiny_corpus, "dev", DecodeParams(method="bpa"), baseline_time=1.0)
    assert summary["speedup_vs_baseline"] == pytest.approx(1.0 / summary["mean_time"])
    assert sum(b["count"] for b in summary["hist"]) == len(tiny_corpus["dev"])
    write_results(tmp_path, results, summary, tiny_corpus, "bpa")
    rows = [json.loads(ln) for ln in (tmp_path / "results.jsonl").read_text().splitlines()]
    assert set(rows[0]) == {"utt_id", "method", "hypothesis", "ref", "alignment", "score", "wall_time_s"}
    assert [r["utt_id"] for r in rows] == sorted(r["utt_id"] for r in rows)
    s = json.loads((tmp_path / "summary.json").read_text())
    assert {"wer", "mr", "lper", "mean_time", "speedup_vs_baseline"} <= set(s)


def test_at_method_decodes(tiny_corpus, pair):
    _, scorer = pair
    results, summary = decode_corpus(scorer, None, tiny_corpus, "dev", DecodeParams(method="at", at_beam=2), limit=3)
    assert len(results) == 3 and summary["mr"] is None


def test_embedding_sums_merge_linearly(tiny_corpus, pair):
    model, _ = pair
    utts = tiny_corpus["train"]
    full = token_embedding_sums(model, tiny_corpus, utts, "sad")
    merged = merge_embedding_sums(token_embedding_sums(model, tiny_corpus, utts[:10], "sad"),
                                  token_embedding_sums(model, tiny_corpus, utts[10:], "sad"))
    a = {r["id"]: np.array(r["vector"]) for r in embedding_records(*full, tiny_corpus.vocab)}
    b = {r["id"]: np.array(r["vector"]) for r in embedding_records(*merged, tiny_corpus.vocab)}
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_allclose(a[k], b[k], atol=1e-9, rtol=0)
    assert set(a) == set(range(1, tiny_corpus.vocab.size))  # every id but blank, EOS included
    assert all(len(v) == model.cfg.d_model for v in a.values())


def test_embedding_level_validated(tiny_corpus, pair):
    with pytest.raises(ContractError):
        token_embedding_sums(pair[0], tiny_corpus, tiny_corpus["dev"], "encoder")
