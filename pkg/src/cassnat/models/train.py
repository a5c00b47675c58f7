"""Seeded, resumable training with per-epoch checkpoints, early stopping and weight averaging."""

from __future__ import annotations

import json
import math
import re
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..data import Corpus, iterate_batches
from ..errors import CheckpointError, ContractError, TrainingAborted
from ..metrics import corpus_wer
from ..numcore import backward, checkpoint
from ..numcore.optim import Adam, Schedule
from .at import ATModel
from .cassnat import CassNat
from .config import LossWeights, ModelConfig

LOG_KEYS = ("step", "lr", "loss", "ctc_final", "ctc_mid", "ce_final", "ce_mid", "train_lper")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    warmup_steps: int = 500
    peak_lr: float = 1e-3
    hold_steps: int = 0
    decay_steps: int = 5000
    final_lr: float = 1e-5
    clip_norm: float | None = 5.0
    ctc_warmup_epochs: int = 3
    patience: int = 5
    average_last: int = 3
    max_train_utts: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.average_last < 1:
            raise ContractError("epochs, batch_size and average_last must be >= 1")

    def schedule(self) -> Schedule:
        return Schedule(self.warmup_steps, self.peak_lr, self.hold_steps, self.decay_steps, self.final_lr)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


MODELS = {"at": ATModel, "cassnat": CassNat}


def build_model(kind: str, cfg: ModelConfig, seed: int = 0, weights: LossWeights | None = None):
    if kind not in MODELS:
        raise ContractError(f"unknown model kind {kind!r}")
    return MODELS[kind](cfg, np.random.default_rng(seed), weights)


def _model_meta(model) -> dict:
    return {"kind": model.kind, "model_config": model.cfg.to_dict(), "loss_weights": asdict(model.weights)}


def save_model(path, model, extra: dict | None = None, arrays: dict | None = None) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    tensors.update(arrays or {})
    checkpoint.save(path, tensors, {**_model_meta(model), **(extra or {})})


def load_model(path):
    tensors, meta = checkpoint.load(path)
    if not meta or "kind" not in meta:
        raise CheckpointError(f"{path}: no model metadata")
    model = build_model(meta["kind"], ModelConfig.from_dict(meta["model_config"]), 0,
                        LossWeights(**meta.get("loss_weights", {})))
    model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
    return model.eval()


def load_encoder_from(model, path) -> None:
    """Copy encoder weights from another checkpoint (e.g. the AT baseline)."""
    tensors, _ = checkpoint.load(path)
    enc = {k[len("model.encoder."):]: v for k, v in tensors.items() if k.startswith("model.encoder.")}
    if not enc:
        raise CheckpointError(f"{path}: no encoder weights")
    model.encoder.load_state_dict(enc, strict=True)


def dev_wer(model, corpus: Corpus, split: str = "dev", batch_size: int = 50) -> float:
    """Greedy (AT) or best-path-alignment (CASS-NAT) error rate on a split."""
    model.eval()
    pairs = []
    for batch in iterate_batches(corpus[split], batch_size, corpus, sort_by_length=True):
        hyps = model.greedy_batch(batch) if model.kind == "at" else model.bpa_batch(batch)
        for i, h in enumerate(hyps):
            pairs.append((batch.targets[i, : batch.target_lengths[i]].tolist(), h))
    return corpus_wer(pairs)["rate"]


@dataclass
class TrainResult:
    final_path: Path
    best_dev_wer: float
    history: list[dict] = field(default_factory=list)
    stopped_early: bool = False


def _epoch_path(out: Path, epoch: int) -> Path:
    return out / f"epoch-{epoch:03d}.ckpt"


def _latest_epoch(out: Path) -> int | None:
    found = [int(m.group(1)) for p in out.glob("epoch-*.ckpt") if (m := re.match(r"epoch-(\d+)\.ckpt$", p.name))]
    return max(found) if found else None


def average_checkpoints(paths) -> dict[str, np.ndarray]:
    acc: dict[str, np.ndarray] = {}
    for p in paths:
        tensors, _ = checkpoint.load(p)
        for k, v in tensors.items():
            if k.startswith("model."):
                acc[k[6:]] = acc.get(k[6:], 0.0) + v
    return {k: v / len(paths) for k, v in acc.items()}


def train(model, corpus: Corpus, tcfg: TrainConfig, out_dir, resume: bool = False, verbose: bool = False) -> TrainResult:
    """Train ``model`` in place; leaves epoch checkpoints, ``train.jsonl``, ``dev.jsonl`` and ``final.ckpt``.

    The CASS-NAT model trains on CTC alone for the first
    ``ctc_warmup_epochs`` epochs. Each epoch's data order and dropout masks
    derive from (seed, epoch), so a resumed run repeats the uninterrupted one.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sched = tcfg.schedule()
    params = model.parameters()
    opt = Adam(params, clip_norm=tcfg.clip_norm)
    log_path, dev_path = out / "train.jsonl", out / "dev.jsonl"
    step, start_epoch, best, bad, history = 0, 0, math.inf, 0, []

    last = _latest_epoch(out) if resume else None
    if last is not None:
        tensors, meta = checkpoint.load(_epoch_path(out, last))
        model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
        opt.load_state_arrays({k: v for k, v in tensors.items() if k.startswith("adam.")})
        step, start_epoch, best, bad, history = meta["step"], last + 1, meta["best"], meta["bad"], meta["history"]
        _truncate_log(log_path, step)
        _truncate_log(dev_path, last, key="epoch")
    else:
        for p in (log_path, dev_path):
            p.write_text("")

    train_utts = corpus["train"][: tcfg.max_train_utts] if tcfg.max_train_utts else corpus["train"]
    warmup = tcfg.ctc_warmup_epochs if model.kind == "cassnat" else 0
    stopped = False
    with open(log_path, "a") as log, open(dev_path, "a") as devlog:
        for epoch in range(start_epoch, tcfg.epochs):
            if bad >= tcfg.patience:
                stopped = True
                break
            model.train().set_rng(np.random.default_rng([tcfg.seed, epoch, 1]))
            t0 = time.perf_counter()
            for batch in iterate_batches(train_utts, tcfg.batch_size, corpus, True, tcfg.seed, epoch):
                loss, diag = model.loss(batch, ctc_only=epoch < warmup)
                value = loss.item()
                lr = sched.lr(step)
                if not math.isfinite(value):
                    dump = {"epoch": epoch, "step": step, "lr": lr, "utt_ids": batch.utt_ids, **diag}
                    (out / "nan_dump.json").write_text(json.dumps(dump, indent=1, default=str))
                    raise TrainingAborted(f"non-finite loss at step {step}; see {out / 'nan_dump.json'}")
                opt.zero_grad()
                backward(loss)
                opt.step(lr)
                step += 1
                rec = {"step": step, "lr": lr, "loss": value, **{k: diag.get(k) for k in LOG_KEYS[3:]}}
                log.write(json.dumps(rec) + "\n")
            log.flush()
            wer = dev_wer(model, corpus)
            # the CTC-only warmup epochs do not train the decoder, so they don't count for stopping
            if epoch >= warmup:
                if wer < best:
                    best, bad = wer, 0
                else:
                    bad += 1
            entry = {"epoch": epoch, "step": step, "dev_wer": wer, "seconds": time.perf_counter() - t0}
            history.append(entry)
            devlog.write(json.dumps(entry) + "\n")
            devlog.flush()
            if verbose:
                print(json.dumps(entry), flush=True)
            save_model(_epoch_path(out, epoch), model,
                       {"epoch": epoch, "step": step, "best": best, "bad": bad, "history": history,
                        "train_config": asdict(tcfg)},
                       opt.state_arrays())
        else:
            stopped = bad >= tcfg.patience

    last = _latest_epoch(out)
    lo = min(last, max(warmup, last - tcfg.average_last + 1))
    chosen = [_epoch_path(out, e) for e in range(lo, last + 1)]
    model.load_state_dict(average_checkpoints(chosen))
    final = out / "final.ckpt"
    save_model(final, model, {"averaged": [p.name for p in chosen], "train_config": asdict(tcfg)})
    return TrainResult(final, best, history, stopped)


def _truncate_log(path: Path, upto: int, key: str = "step") -> None:
    if not path.exists():
        return
    keep = [ln for ln in path.read_text().splitlines() if ln.strip() and json.loads(ln)[key] <= upto]
    path.write_text("".join(ln + "\n" for ln in keep))
