"""Toy end-to-end benchmark: synthesize, train AT then CASS-NAT, decode the dev split every way."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .data import SynthSpec, load_corpus, save_corpus, synthesize
from .decode import DecodeParams, decode_corpus, write_results
from .models import ModelConfig, TrainConfig, build_model, load_encoder_from, load_model, train


@dataclass(frozen=True)
class BenchmarkConfig:
    synth: SynthSpec = field(default_factory=SynthSpec)
    d_model: int = 32
    n_enc: int = 2
    n_sad: int = 2
    n_mad: int = 1
    at_epochs: int = 40
    cassnat_epochs: int = 40
    seed: int = 0
    split: str = "dev"
    tau: float = 0.9
    samples: int = 50
    at_beam: int = 10
    init_from_at: bool = True
    stress_noise: float = 2.0  # the dev split again, same tokens and durations, noisier frames

    def model_config(self, corpus) -> ModelConfig:
        return ModelConfig(input_dim=corpus.spec.feat_dim, vocab_size=corpus.vocab.size, blank_id=corpus.vocab.blank_id,
                           eos_id=corpus.vocab.eos_id, d_model=self.d_model, n_enc=self.n_enc, n_sad=self.n_sad,
                           n_mad=self.n_mad)


RUNS = (
    ("ctc", {}),
    ("oracle", {}),
    ("bpa", {}),
    ("bsa", {}),
    ("esa", {}),
    ("esa_s1", {"samples": 1}),
    ("at", {}),
)


def _trained(out: Path, kind: str, corpus, cfg: BenchmarkConfig, log) -> tuple[object, float, bool]:
    run = out / kind
    final = run / "final.ckpt"
    if final.exists() and (run / "timing.json").exists():
        log(f"reusing {final}")
        return load_model(final), json.loads((run / "timing.json").read_text())["train_seconds"], True
    model = build_model(kind, cfg.model_config(corpus), cfg.seed)
    epochs = cfg.at_epochs if kind == "at" else cfg.cassnat_epochs
    warmup = 3
    if kind == "cassnat" and cfg.init_from_at:
        load_encoder_from(model, out / "at" / "final.ckpt")
        warmup = 0  # the encoder arrives trained
    t0 = time.perf_counter()
    train(model, corpus, TrainConfig(epochs=epochs, seed=cfg.seed, ctc_warmup_epochs=warmup), run, resume=True,
          verbose=log is print)
    seconds = time.perf_counter() - t0
    (run / "timing.json").write_text(json.dumps({"train_seconds": seconds}))
    log(f"trained {kind} in {seconds:.0f}s")
    return model.eval(), seconds, False


def stress_corpus(corpus, noise: float):
    """Dev split regenerated with more noise, normalized with the original train statistics."""
    spec = replace(corpus.spec, noise=noise, n_train=0, n_test=0)
    stressed = synthesize(spec)
    stressed.mean, stressed.std = corpus.mean, corpus.std
    return stressed


def run_benchmark(out_dir, cfg: BenchmarkConfig | None = None, verbose: bool = False) -> dict:
    """Everything lands in ``out_dir``; finished pieces are reused, so reruns only decode.

    ``total_seconds`` counts the recorded training time of reused models too.
    """
    cfg = cfg or BenchmarkConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = print if verbose else (lambda *_: None)
    t_start = time.perf_counter()

    corpus_path = out / "corpus.bin"
    if corpus_path.exists():
        corpus = load_corpus(corpus_path)
    else:
        corpus = synthesize(cfg.synth)
        save_corpus(corpus_path, corpus)
    (out / "benchmark_config.json").write_text(json.dumps(asdict(cfg), indent=1))

    at, at_seconds, at_reused = _trained(out, "at", corpus, cfg, log)
    cn, cn_seconds, cn_reused = _trained(out, "cassnat", corpus, cfg, log)
    reused_seconds = at_seconds * at_reused + cn_seconds * cn_reused

    summaries = {}
    for name, extra in RUNS:
        method = name.split("_")[0]
        params = DecodeParams(method=method, tau=cfg.tau, samples=extra.get("samples", cfg.samples), seed=cfg.seed,
                              at_beam=cfg.at_beam)
        model, scorer = (at, None) if method == "at" else (cn, at)
        results, summary = decode_corpus(model, scorer, corpus, cfg.split, params)
        write_results(out / "decode" / name, results, summary, corpus, method)
        summaries[name] = summary
        log(f"{name:8s} wer={summary['wer']:.4f} mr={summary['mr']} lper={summary['lper']} "
            f"ms/utt={1000 * summary['mean_time']:.2f}")

    stress = {}
    if cfg.stress_noise:
        hard = stress_corpus(corpus, cfg.stress_noise)
        for method in ("bpa", "esa"):
            params = DecodeParams(method=method, tau=cfg.tau, samples=cfg.samples, seed=cfg.seed)
            results, summary = decode_corpus(cn, at, hard, "dev", params)
            write_results(out / "decode" / f"stress_{method}", results, summary, hard, method)
            stress[method] = summary
            log(f"stress {method:8s} wer={summary['wer']:.4f} lper={summary['lper']}")

    at_time = summaries["at"]["mean_time"]
    report = {
        "wer": {k: s["wer"] for k, s in summaries.items()},
        "mr": {k: s["mr"] for k, s in summaries.items()},
        "lper": {k: s["lper"] for k, s in summaries.items()},
        "hist": {k: s["hist"] for k, s in summaries.items() if s["hist"]},
        "mean_time": {k: s["mean_time"] for k, s in summaries.items()},
        "speedup_vs_at_beam": {k: at_time / s["mean_time"] for k, s in summaries.items()},
        "stress": {k: {"wer": v["wer"], "lper": v["lper"], "hist": v["hist"]} for k, v in stress.items()},
        "train_seconds": {"at": at_seconds, "cassnat": cn_seconds},
        # training time is the recorded one even when the models were reused
        "total_seconds": time.perf_counter() - t_start + reused_seconds,
    }
    (out / "benchmark.json").write_text(json.dumps(report, indent=1))
    return report
