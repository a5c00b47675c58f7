"""Synthetic speech-like corpus: token prototypes held for a random duration plus Gaussian noise."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ctc.loss import is_feasible
from .ctc.types import Vocabulary
from .errors import CheckpointError, ContractError

MAGIC = b"CASSCORP"
VERSION = 1
SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class SynthSpec:
    vocab_size: int = 10
    feat_dim: int = 8
    min_dur: int = 4
    max_dur: int = 8
    min_len: int = 3
    max_len: int = 10
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    noise: float = 1.0
    proto_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.min_dur < 1 or self.max_dur < self.min_dur:
            raise ContractError("need 1 <= min_dur <= max_dur")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ContractError("need 1 <= min_len <= max_len")
        if self.vocab_size < 2:
            raise ContractError("vocab_size must be >= 2 so adjacent tokens can differ")
        if self.noise < 0:
            raise ContractError("noise must be >= 0")

    def counts(self) -> dict[str, int]:
        return {"train": self.n_train, "dev": self.n_dev, "test": self.n_test}


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray  # T x F float32, unnormalized
    transcript: list[int]

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class Corpus:
    spec: SynthSpec
    vocab: Vocabulary
    mean: np.ndarray
    std: np.ndarray
    splits: dict[str, list[Utterance]] = field(default_factory=dict)
    prototypes: np.ndarray | None = None

    def __getitem__(self, split: str) -> list[Utterance]:
        return self.splits[split]

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        return (feats.astype(np.float64) - self.mean) / self.std


def subsampled_length(t: int) -> int:
    return -(-(-(-t // 2)) // 2)


def make_prototypes(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """One F-dim vector per content token, resampled until all pairs are distinct."""
    while True:
        protos = rng.normal(scale=spec.proto_scale, size=(spec.vocab_size, spec.feat_dim))
        d = np.linalg.norm(protos[:, None] - protos[None], axis=-1)
        if (d[~np.eye(spec.vocab_size, dtype=bool)] > 1e-6).all():
            return protos


def _sample_utterance(spec: SynthSpec, protos: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, list[int]]:
    while True:
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        tokens = [int(rng.integers(1, spec.vocab_size + 1))]
        while len(tokens) < n:
            # draw from the other V-1 tokens so no two neighbours repeat
            k = int(rng.integers(1, spec.vocab_size))
            tokens.append(k if k < tokens[-1] else k + 1)
        durs = rng.integers(spec.min_dur, spec.max_dur + 1, size=n)
        frames = np.repeat(protos[np.array(tokens) - 1], durs, axis=0)
        if spec.noise > 0:
            frames = frames + rng.normal(scale=spec.noise, size=frames.shape)
        if is_feasible(subsampled_length(len(frames)), tokens):
            return frames.astype(np.float32), tokens


def synthesize(spec: SynthSpec) -> Corpus:
    seeds = np.random.SeedSequence(spec.seed).spawn(1 + len(SPLITS))
    protos = make_prototypes(spec, np.random.default_rng(seeds[0]))
    vocab = Vocabulary.toy(spec.vocab_size)
    splits = {}
    for name, ss in zip(SPLITS, seeds[1:]):
        rng = np.random.default_rng(ss)
        utts = []
        for i in range(spec.counts()[name]):
            feats, tokens = _sample_utterance(spec, protos, rng)
            utts.append(Utterance(f"{name}-{i:05d}", feats, tokens))
        splits[name] = utts
    train = np.concatenate([u.features for u in splits["train"]]).astype(np.float64) if splits["train"] else np.zeros((1, spec.feat_dim))
    mean = train.mean(axis=0)
    std = np.maximum(train.std(axis=0), 1e-6)
    return Corpus(spec, vocab, mean, std, splits, protos)


# -- serialization -------------------------------------------------------------------
#
# MAGIC | u32 version | u32 header_len | header JSON | records ... | index JSON | u64 index_offset
# record: u32 meta_len | meta JSON {utt_id, split, T, F, transcript} | T*F float32 little-endian


def save_corpus(path, corpus: Corpus) -> None:
    header = json.dumps({
        "spec": asdict(corpus.spec),
        "vocab": corpus.vocab.to_dict(),
        "mean": corpus.mean.tolist(),
        "std": corpus.std.tolist(),
        "splits": {k: len(v) for k, v in corpus.splits.items()},
        "prototypes": None if corpus.prototypes is None else corpus.prototypes.tolist(),
    }, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    offset = sum(len(p) for p in parts)
    index = []
    for split, utts in corpus.splits.items():
        for u in utts:
            meta = json.dumps({"utt_id": u.utt_id, "split": split, "T": int(u.features.shape[0]),
                               "F": int(u.features.shape[1]), "transcript": list(u.transcript)}).encode()
            blob = u.features.astype("<f4").tobytes()
            index.append([u.utt_id, split, offset])
            rec = struct.pack("<I", len(meta)) + meta + blob
            parts.append(rec)
            offset += len(rec)
    parts.append(json.dumps(index).encode())
    parts.append(struct.pack("<Q", offset))
    Path(path).write_bytes(b"".join(parts))


def _read_record(blob: bytes, pos: int) -> tuple[str, Utterance]:
    (n,) = struct.unpack_from("<I", blob, pos)
    meta = json.loads(blob[pos + 4 : pos + 4 + n])
    start = pos + 4 + n
    count = meta["T"] * meta["F"]
    feats = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(meta["T"], meta["F"]).astype(np.float32)
    return meta["split"], Utterance(meta["utt_id"], feats, list(meta["transcript"]))


def load_corpus(path) -> Corpus:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a corpus file")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported corpus version {version}")
    header = json.loads(blob[16 : 16 + hlen])
    (index_at,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    index = json.loads(blob[index_at : len(blob) - 8])
    # the index keeps the written split order; the header's counts are key-sorted
    splits: dict[str, list[Utterance]] = {}
    for _utt, _split, off in index:
        split, utt = _read_record(blob, off)
        splits.setdefault(split, []).append(utt)
    for k in header["splits"]:
        splits.setdefault(k, [])
    return Corpus(SynthSpec(**header["spec"]), Vocabulary.from_dict(header["vocab"]),
                  np.array(header["mean"]), np.array(header["std"]), splits,
                  None if header.get("prototypes") is None else np.array(header["prototypes"]))


def read_utterance(path, utt_id: str) -> Utterance:
    """Random access through the trailing index."""
    blob = Path(path).read_bytes()
    (index_at,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    for uid, _split, off in json.loads(blob[index_at : len(blob) - 8]):
        if uid == utt_id:
            return _read_record(blob, off)[1]
    raise KeyError(utt_id)


# -- batching ---------------------------------------------------------------------------


@dataclass
class Batch:
    features: np.ndarray  # B x Tmax x F, normalized float64, zero padded
    frame_mask: np.ndarray  # B x Tmax bool
    lengths: np.ndarray
    targets: np.ndarray  # B x Umax, padded with -1
    target_lengths: np.ndarray
    utt_ids: list[str]

    def __len__(self) -> int:
        return len(self.utt_ids)


def make_batch(utts: list[Utterance], corpus: Corpus | None = None) -> Batch:
    lengths = np.array([u.num_frames for u in utts], dtype=np.int64)
    ulens = np.array([len(u.transcript) for u in utts], dtype=np.int64)
    f = utts[0].features.shape[1]
    feats = np.zeros((len(utts), lengths.max(), f))
    targets = np.full((len(utts), max(int(ulens.max()), 1)), -1, dtype=np.int64)
    for i, u in enumerate(utts):
        x = corpus.normalize(u.features) if corpus is not None else u.features.astype(np.float64)
        feats[i, : u.num_frames] = x
        targets[i, : len(u.transcript)] = u.transcript
    mask = np.arange(lengths.max())[None, :] < lengths[:, None]
    return Batch(feats, mask, lengths, targets, ulens, [u.utt_id for u in utts])


def iterate_batches(utts: list[Utterance], size: int, corpus: Corpus | None = None, sort_by_length: bool = True,
                    seed: int | None = None, epoch: int = 0):
    """Yield padded batches.

    With a ``seed`` the order is shuffled per epoch (reproducibly); with
    ``sort_by_length`` utterances of similar length share a batch.
    """
    order = np.arange(len(utts))
    rng = np.random.default_rng([seed, epoch]) if seed is not None else None
    if rng is not None:
        order = rng.permutation(order)
    if sort_by_length:
        order = order[np.argsort([utts[i].num_frames for i in order], kind="stable")]
    chunks = [order[i : i + size] for i in range(0, len(order), size)]
    if rng is not None and sort_by_length:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    for chunk in chunks:
        yield make_batch([utts[i] for i in chunk], corpus)
