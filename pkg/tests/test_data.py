from dataclasses import replace

import numpy as np
import pytest

from cassnat.ctc import collapse, is_feasible
from cassnat.data import (
    SynthSpec,
    iterate_batches,
    load_corpus,
    make_batch,
    read_utterance,
    save_corpus,
    subsampled_length,
    synthesize,
)
from cassnat.errors import CheckpointError, ContractError

SMALL = SynthSpec(n_train=60, n_dev=20, n_test=20, seed=3)


@pytest.fixture(scope="module")
def corpus():
    return synthesize(SMALL)


def test_subsampled_length():
    # two stride-2 convolutions with padding 1, kernel 3
    for t in range(1, 40):
        a = (t + 2 - 3) // 2 + 1
        assert subsampled_length(t) == (a + 2 - 3) // 2 + 1


def test_default_spec():
    s = SynthSpec()
    assert (s.vocab_size, s.feat_dim, s.min_dur, s.max_dur, s.min_len, s.max_len) == (10, 8, 4, 8, 3, 10)
    assert s.counts() == {"train": 2000, "dev": 200, "test": 200}


def test_spec_validation():
    with pytest.raises(ContractError):
        SynthSpec(min_dur=0)
    with pytest.raises(ContractError):
        SynthSpec(min_len=5, max_len=4)


def test_every_utterance_feasible_after_subsampling(corpus):
    for split in corpus.splits.values():
        for u in split:
            assert is_feasible(subsampled_length(u.num_frames), u.transcript)
            assert 3 <= len(u.transcript) <= 10
            assert 0 not in u.transcript and corpus.vocab.eos_id not in u.transcript


def test_deterministic_per_seed(corpus):
    again = synthesize(SMALL)
    for k in corpus.splits:
        for a, b in zip(corpus[k], again[k]):
            assert a.transcript == b.transcript
            np.testing.assert_array_equal(a.features, b.features)
    other = synthesize(replace(SMALL, seed=4))
    assert [u.transcript for u in other["train"]] != [u.transcript for u in corpus["train"]]


def test_splits_differ(corpus):
    assert [u.transcript for u in corpus["dev"]] != [u.transcript for u in corpus["test"][:20]]


def test_noiseless_frames_are_prototypes():
    c = synthesize(replace(SMALL, noise=0.0))
    for u in c["train"][:20]:
        d = np.linalg.norm(u.features[:, None].astype(np.float64) - c.prototypes[None], axis=-1)
        assert d.min(axis=1).max() < 1e-5
        nearest = d.argmin(axis=1) + 1
        assert collapse(nearest.tolist(), 0) == u.transcript


def test_prototypes_distinct(corpus):
    p = corpus.prototypes
    d = np.linalg.norm(p[:, None] - p[None], axis=-1)
    assert (d[~np.eye(len(p), dtype=bool)] > 0).all()


def test_normalization_from_train(corpus):
    x = np.concatenate([corpus.normalize(u.features) for u in corpus["train"]])
    np.testing.assert_allclose(x.mean(0), 0, atol=1e-9)
    np.testing.assert_allclose(x.std(0), 1, atol=1e-9)


def test_corpus_round_trip(corpus, tmp_path):
    p = tmp_path / "c.bin"
    save_corpus(p, corpus)
    back = load_corpus(p)
    assert back.spec == corpus.spec and back.vocab == corpus.vocab
    np.testing.assert_array_equal(back.mean, corpus.mean)
    for k in corpus.splits:
        for a, b in zip(corpus[k], back[k]):
            assert a.utt_id == b.utt_id and a.transcript == b.transcript
            assert a.features.tobytes() == b.features.tobytes()
    q = tmp_path / "d.bin"
    save_corpus(q, back)
    assert p.read_bytes() == q.read_bytes()
    u = read_utterance(p, "dev-00007")
    assert u.features.tobytes() == corpus["dev"][7].features.tobytes()


def test_corrupt_corpus_rejected(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"nope" * 10)
    with pytest.raises(CheckpointError):
        load_corpus(p)


def test_single_utterance_batch_unpadded(corpus):
    b = make_batch(corpus["train"][:1], corpus)
    assert b.frame_mask.all() and (b.targets >= 0).all()


def test_equal_length_batch_has_no_padding(corpus):
    u = corpus["train"][0]
    b = make_batch([u, u, u], corpus)
    assert b.frame_mask.all()


def test_batch_masks_consistent(corpus):
    for b in iterate_batches(corpus["train"], 8, corpus, seed=0):
        assert (b.frame_mask.sum(1) == b.lengths).all()
        assert ((b.targets >= 0).sum(1) == b.target_lengths).all()
        assert (b.features[~b.frame_mask] == 0).all()
        for i, uid in enumerate(b.utt_ids):
            assert b.lengths[i] == next(u for u in corpus["train"] if u.utt_id == uid).num_frames


def test_shuffled_epochs_reproducible(corpus):
    def order(epoch, seed=0):
        return [tuple(b.utt_ids) for b in iterate_batches(corpus["train"], 8, corpus, seed=seed, epoch=epoch)]

    assert order(0) == order(0)
    assert order(0) != order(1)
    assert sorted(sum(map(list, order(1)), [])) == sorted(u.utt_id for u in corpus["train"])


def test_sorted_batches_group_lengths(corpus):
    lengths = [b.lengths for b in iterate_batches(corpus["train"], 8, corpus)]
    flat = np.concatenate(lengths)
    assert (np.diff(flat) >= 0).all()
