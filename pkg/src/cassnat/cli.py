"""Command-line entry point: synth, train, decode, analyze, dump-embeddings, schema.

Hyper-parameters come from one JSON config (validated against ``config_schema()``
before any work starts); command-line flags override it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import types
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import jsonschema

from .ctc import Alignment, read_alignments
from .data import SynthSpec, load_corpus, save_corpus, synthesize
from .decode import (
    LEVELS,
    METHODS,
    DecodeParams,
    decode_corpus,
    embedding_records,
    token_embedding_sums,
    write_results,
)
from .errors import CheckpointError, ContractError, TrainingAborted
from .metrics import report
from .models import LossWeights, ModelConfig, TrainConfig, build_model, load_encoder_from, load_model, train

EXIT_OK, EXIT_USAGE, EXIT_ABORT, EXIT_MISSING = 0, 2, 3, 4
CONFIG_ECHO = "config.json"


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


@dataclass
class ExperimentConfig:
    corpus: str | None = None
    output_dir: str | None = None
    synth: SynthSpec = field(default_factory=SynthSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeParams = field(default_factory=DecodeParams)

    SECTIONS = {"synth": SynthSpec, "model": ModelConfig, "loss_weights": LossWeights,
                "train": TrainConfig, "decode": DecodeParams}

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        validate_config(d)
        kw = {k: d[k] for k in ("corpus", "output_dir") if k in d}
        for name, typ in cls.SECTIONS.items():
            if name in d:
                kw[name] = typ(**d[name])
        return cls(**kw)

    def to_dict(self) -> dict:
        out = {"corpus": self.corpus, "output_dir": self.output_dir}
        for name in self.SECTIONS:
            out[name] = asdict(getattr(self, name))
        return out


_JSON_TYPES = {int: "integer", float: "number", bool: "boolean", str: "string", type(None): "null"}


def _json_type(hint) -> list[str]:
    args = typing.get_args(hint) if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union else (hint,)
    out = [_JSON_TYPES[a] for a in args]
    if "number" in out and "integer" not in out:
        out.append("integer")
    return out


def _section_schema(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {"type": "object", "additionalProperties": False,
            "properties": {f.name: {"type": _json_type(hints[f.name])} for f in fields(cls)}}


def config_schema() -> dict:
    """JSON schema of the experiment config; unknown keys are rejected at every level."""
    props = {"corpus": {"type": ["string", "null"]}, "output_dir": {"type": ["string", "null"]}}
    for name, cls in ExperimentConfig.SECTIONS.items():
        props[name] = _section_schema(cls)
    props["decode"]["properties"]["method"]["enum"] = list(METHODS)
    return {"$schema": "https://json-schema.org/draft/2020-12/schema", "type": "object",
            "additionalProperties": False, "properties": props}


def validate_config(d: dict) -> None:
    try:
        jsonschema.validate(d, config_schema())
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise CliError(f"config invalid at {path}: {e.message}", EXIT_USAGE) from None


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.exists():
        raise CliError(f"config not found: {p}", EXIT_MISSING)
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliError(f"config is not valid JSON: {e}", EXIT_USAGE) from None
    try:
        return ExperimentConfig.from_dict(d)
    except (ContractError, TypeError) as e:
        raise CliError(f"config rejected: {e}", EXIT_USAGE) from None


def _override(section, **flags):
    changes = {k: v for k, v in flags.items() if v is not None}
    try:
        return replace(section, **changes) if changes else section
    except ContractError as e:
        raise CliError(str(e), EXIT_USAGE) from None


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.output_dir
    if out is None:
        raise CliError("no output directory (use --out or output_dir in the config)", EXIT_USAGE)
    return Path(out)


def _echo(out: Path, cfg: ExperimentConfig, command: str, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(json.dumps({"command": command, **cfg.to_dict(), **(extra or {})}, indent=1))


def _need(path, what: str) -> Path:
    if path is None:
        raise CliError(f"missing {what}", EXIT_USAGE)
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}", EXIT_MISSING)
    return p


def _corpus(args, cfg):
    p = _need(args.corpus or cfg.corpus, "corpus")
    try:
        return load_corpus(p)
    except CheckpointError as e:
        raise CliError(str(e), EXIT_USAGE) from None


def _model(path, what="model checkpoint"):
    try:
        return load_model(_need(path, what))
    except CheckpointError as e:
        raise CliError(str(e), EXIT_USAGE) from None


# -- commands ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    cfg.synth = _override(cfg.synth, seed=args.seed, noise=args.noise)
    out = _out_dir(args, cfg)
    target = out / "corpus.bin"
    if target.exists() and not args.force:
        raise CliError(f"{target} exists (use --force to overwrite)", EXIT_USAGE)
    corpus = synthesize(cfg.synth)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(target, corpus)
    cfg.corpus = str(target)
    _echo(out, cfg, "synth")
    print(f"wrote {target}: " + ", ".join(f"{k}={len(v)}" for k, v in corpus.splits.items()))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    corpus = _corpus(args, cfg)
    cfg.train = _override(cfg.train, epochs=args.epochs, seed=args.seed, max_train_utts=args.max_train_utts)
    # the corpus fixes the input and output sizes
    cfg.model = _override(cfg.model, input_dim=corpus.spec.feat_dim, vocab_size=corpus.vocab.size,
                          blank_id=corpus.vocab.blank_id, eos_id=corpus.vocab.eos_id)
    out = _out_dir(args, cfg)
    if (out / "final.ckpt").exists() and not (args.force or args.resume):
        raise CliError(f"{out} already holds a finished run (use --force or --resume)", EXIT_USAGE)
    model = build_model(args.model, cfg.model, cfg.train.seed, cfg.loss_weights)
    if args.init_encoder:
        try:
            load_encoder_from(model, _need(args.init_encoder, "encoder checkpoint"))
        except CheckpointError as e:
            raise CliError(str(e), EXIT_USAGE) from None
    _echo(out, cfg, "train", {"model_kind": args.model, "init_encoder": args.init_encoder})
    try:
        res = train(model, corpus, cfg.train, out, resume=args.resume, verbose=not args.quiet)
    except TrainingAborted as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_ABORT
    print(json.dumps({"final": str(res.final_path), "best_dev_wer": res.best_dev_wer, "stopped_early": res.stopped_early}))
    return EXIT_OK


def _summary_table(s: dict) -> str:
    speed = "-" if s.get("speedup_vs_baseline") is None else f"{s['speedup_vs_baseline']:.2f}x"

    def pct(v):
        return "-" if v is None else f"{100 * v:.2f}"

    head = f"{'method':<8} {'WER%':>7} {'MR%':>7} {'LPER%':>7} {'ms/utt':>8} {'speedup':>8}"
    row = (f"{s['method']:<8} {pct(s['wer']):>7} {pct(s['mr']):>7} {pct(s['lper']):>7} "
           f"{1000 * s['mean_time']:>8.2f} {speed:>8}")
    return head + "\n" + row


def cmd_decode(args) -> int:
    cfg = load_config(args.config)
    params = _override(cfg.decode, method=args.method, tau=args.tau, samples=args.samples, beam=args.beam,
                       at_beam=args.at_beam, seed=args.seed, rank_alignments=args.rank_alignments or None)
    cfg.decode = params
    corpus = _corpus(args, cfg)
    model = _model(args.model)
    scorer = None
    if params.method == "esa":
        scorer = _model(args.scorer, "scorer checkpoint (--scorer)")
    if params.method == "at" and model.kind != "at":
        raise CliError("--method at needs an AT checkpoint", EXIT_USAGE)
    if params.method not in ("at",) and model.kind != "cassnat":
        raise CliError(f"--method {params.method} needs a CASS-NAT checkpoint", EXIT_USAGE)
    baseline = None
    if args.baseline:
        baseline = json.loads(_need(args.baseline, "baseline summary").read_text())["mean_time"]
    out = _out_dir(args, cfg)
    _echo(out, cfg, "decode", {"model_path": args.model, "scorer_path": args.scorer, "split": args.split})
    try:
        results, summary = decode_corpus(model, scorer, corpus, args.split, params, threads=args.threads,
                                         baseline_time=baseline, limit=args.limit)
    except ContractError as e:
        raise CliError(str(e), EXIT_USAGE) from None
    write_results(out, results, summary, corpus, params.method)
    print(_summary_table(summary))
    return EXIT_OK


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(ln) for ln in path.read_text().splitlines() if ln.strip()]


def cmd_analyze(args) -> int:
    rows = _read_jsonl(_need(args.results, "results file"))
    if not rows:
        raise CliError(f"{args.results} holds no results", EXIT_MISSING)
    oracles = read_alignments(_need(args.oracle, "oracle alignments"))
    refs = {r["utt_id"]: r["ref"] for r in rows}
    hyps = {r["utt_id"]: r["hypothesis"] for r in rows}
    cands = {r["utt_id"]: Alignment(r["alignment"]) for r in rows}
    try:
        rep = report(refs, hyps, cands, {k: oracles[k] for k in cands if k in oracles}, blank=args.blank,
                     per_utterance_mr=args.per_utterance_mr)
    except ContractError as e:
        raise CliError(str(e), EXIT_USAGE) from None
    rep["method"] = rows[0].get("method")
    rep["timing"] = {"mean_time": sum(r["wall_time_s"] for r in rows) / len(rows)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(rep, indent=1))
    with open(out / "length_errors.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["delta", "count", "wer"])
        w.writeheader()
        w.writerows(rep["hist"])
    (out / CONFIG_ECHO).write_text(json.dumps({"command": "analyze", "results": args.results, "oracle": args.oracle,
                                               "per_utterance_mr": args.per_utterance_mr, "blank": args.blank}, indent=1))
    print(json.dumps({k: rep[k] for k in ("method", "wer", "mr", "lper")}))
    return EXIT_OK


def cmd_dump_embeddings(args) -> int:
    cfg = load_config(args.config)
    corpus = _corpus(args, cfg)
    model = _model(args.model)
    if model.kind != "cassnat":
        raise CliError("dump-embeddings needs a CASS-NAT checkpoint", EXIT_USAGE)
    sums, counts = token_embedding_sums(model, corpus, corpus[args.split], args.level)
    recs = embedding_records(sums, counts, corpus.vocab)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        for r in recs:
            f.write(json.dumps(r) + "\n")
    (out.parent / CONFIG_ECHO).write_text(json.dumps({"command": "dump-embeddings", **cfg.to_dict(), "model_path": args.model,
                                                      "level": args.level, "split": args.split}, indent=1))
    print(f"wrote {len(recs)} token vectors to {out}")
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(config_schema(), indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cassnat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="experiment config (JSON)")
        if out:
            sp.add_argument("--out", help="output directory")

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    common(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the AT baseline or the CASS-NAT model")
    common(s)
    s.add_argument("--corpus")
    s.add_argument("--model", choices=["at", "cassnat"], required=True)
    s.add_argument("--resume", action="store_true")
    s.add_argument("--force", action="store_true")
    s.add_argument("--init-encoder", help="checkpoint whose encoder initializes this model")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--max-train-utts", type=int)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("decode", help="decode a split and score it")
    common(s)
    s.add_argument("--corpus")
    s.add_argument("--model", required=True)
    s.add_argument("--scorer", help="AT checkpoint used to rank ESA candidates")
    s.add_argument("--method", choices=METHODS)
    s.add_argument("--tau", type=float)
    s.add_argument("--samples", type=int)
    s.add_argument("--beam", type=int)
    s.add_argument("--at-beam", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--rank-alignments", action="store_true")
    s.add_argument("--split", default="dev")
    s.add_argument("--limit", type=int)
    s.add_argument("--baseline", help="summary.json of the run to compute speedups against")
    s.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("analyze", help="MR/LPER report and length-error histogram")
    s.add_argument("--results", required=True)
    s.add_argument("--oracle", required=True, help="oracle alignments (results.jsonl of an oracle run)")
    s.add_argument("--out", required=True)
    s.add_argument("--blank", type=int, default=0)
    s.add_argument("--per-utterance-mr", action="store_true")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("dump-embeddings", help="average token-level embeddings per token")
    common(s, out=False)
    s.add_argument("--corpus")
    s.add_argument("--model", required=True)
    s.add_argument("--level", choices=LEVELS, default="taee")
    s.add_argument("--split", default="dev")
    s.add_argument("--out", required=True, help="output JSON-lines file")
    s.set_defaults(func=cmd_dump_embeddings)

    s = sub.add_parser("schema", help="print the config JSON schema")
    s.set_defaults(func=cmd_schema)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
