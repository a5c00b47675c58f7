import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cassnat.ctc import Alignment
from cassnat.errors import ContractError
from cassnat.metrics import corpus_mismatch_rate, corpus_wer, edit_ops, lper, mismatch_rate, report, wer

from oracles import brute_edit

C, A, T, X = 1, 2, 3, 4
seqs = st.lists(st.integers(1, 4), max_size=6)


def test_wer_identical_is_zero():
    assert wer([C, A, T], [C, A, T])["rate"] == 0.0


def test_wer_single_deletion():
    r = wer([C, A, T], [C, T])
    assert r["errors"] == {"sub": 0, "del": 1, "ins": 0}
    assert r["rate"] == pytest.approx(1 / 3)


def test_wer_prefers_substitution():
    assert wer([C], [A])["errors"] == {"sub": 1, "del": 0, "ins": 0}


def test_wer_empty_reference_uses_unit_denominator():
    assert wer([], [C, A])["rate"] == 2.0
    assert wer([], [])["rate"] == 0.0


def test_edit_ops_matches_exhaustive_scripts():
    rng = random.Random(0)
    for _ in range(300):
        ref = [rng.randint(1, 3) for _ in range(rng.randint(0, 6))]
        hyp = [rng.randint(1, 3) for _ in range(rng.randint(0, 6))]
        cost, s, d, i = brute_edit(ref, hyp)
        assert edit_ops(ref, hyp) == (s, d, i), (ref, hyp)
        assert s + d + i == cost


@given(seqs, seqs)
@settings(max_examples=200, deadline=None)
def test_wer_relabeling_invariant(ref, hyp):
    perm = {1: 3, 2: 4, 3: 1, 4: 2}
    assert wer(ref, hyp) == wer([perm[t] for t in ref], [perm[t] for t in hyp])


@given(seqs, seqs)
@settings(max_examples=200, deadline=None)
def test_wer_upper_bound(ref, hyp):
    assert wer(ref, hyp)["rate"] <= (len(ref) + len(hyp)) / max(len(ref), 1)


def test_corpus_wer_pools_counts():
    r = corpus_wer([([C, A, T], [C, T]), ([A], [A])])
    assert r["rate"] == pytest.approx(1 / 4)


def test_mismatch_rate_examples():
    assert mismatch_rate([C, A, T], [C, A, T]) == 0.0
    assert mismatch_rate([X, X, X], [C, A, T]) == 0.0  # substitutions only
    # (C,A,T) vs (C,T,X): two substitutions tie with delete-A plus insert-X;
    # the substitution script wins, so nothing counts
    cand = Alignment([0, C, 0, T, T, X])
    oracle = Alignment([C, C, A, 0, T, 0])
    assert mismatch_rate(cand, oracle) == 0.0
    assert mismatch_rate(Alignment([C, 0, 0, T]), oracle) == pytest.approx(1 / 3)


def test_mismatch_rate_counts_deletions():
    assert mismatch_rate([C, T], [C, A, T]) == pytest.approx(1 / 3)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=8))
def test_mismatch_rate_self_is_zero(ids):
    a = Alignment(ids)
    assert mismatch_rate(a, a) == 0.0


def test_mismatch_rate_empty_oracle():
    assert mismatch_rate([C, A], []) == 2.0


def test_corpus_mismatch_rate_pooled_and_per_utterance():
    cands = {"u1": [C], "u2": [A, T, X]}
    oracles = {"u1": [C, A, T], "u2": [A]}
    assert corpus_mismatch_rate(cands, oracles) == pytest.approx(4 / 4)
    assert corpus_mismatch_rate(cands, oracles, per_utterance=True) == pytest.approx((2 / 3 + 2) / 2)


def test_lper_fraction_and_histogram():
    oracles = {f"u{i}": [C, A, T] for i in range(4)}
    cands = dict(oracles)
    assert lper(cands, oracles).lper == 0.0
    cands["u3"] = [C]
    d = lper(cands, oracles)
    assert d.lper == 0.25
    assert {k: v["count"] for k, v in d.length_error_hist.items()} == {0: 3, -2: 1}


def test_lper_histogram_totals_and_bucket_wer():
    rng = random.Random(1)
    oracles, cands, refs, hyps = {}, {}, {}, {}
    for i in range(50):
        ref = [rng.randint(1, 4) for _ in range(rng.randint(1, 6))]
        hyp = [rng.randint(1, 4) for _ in range(rng.randint(0, 7))]
        oracles[i], cands[i], refs[i], hyps[i] = ref, hyp, ref, hyp
    d = lper(cands, oracles, refs, hyps)
    assert sum(b["count"] for b in d.length_error_hist.values()) == 50
    assert d.lper == pytest.approx(1 - d.length_error_hist.get(0, {"count": 0})["count"] / 50)
    for delta, b in d.length_error_hist.items():
        keys = [k for k in refs if len(hyps[k]) - len(refs[k]) == delta]
        assert b["wer"] == pytest.approx(corpus_wer([(refs[k], hyps[k]) for k in keys])["rate"])


def test_unpaired_ids_rejected():
    with pytest.raises(ContractError):
        lper({"a": [C]}, {"b": [C]})
    with pytest.raises(ContractError):
        report({"a": [C]}, {"b": [C]})


def test_report_schema():
    r = report({"a": [C, A]}, {"a": [C]}, {"a": [C]}, {"a": [C, A]}, {"mean_time": 0.1})
    assert set(r) == {"wer", "sub", "del", "ins", "mr", "lper", "hist", "timing"}
    assert r["hist"] == [{"delta": -1, "count": 1, "wer": 0.5}]
