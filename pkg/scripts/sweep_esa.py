"""Sweep the ESA threshold and sample count on models left by run_toy_benchmark.py.

    python3 scripts/sweep_esa.py --bench runs/bench --taus 0.5 0.7 0.9 1.0 --samples 1 5 20 50
"""

import argparse
import json
from pathlib import Path

from cassnat.data import load_corpus
from cassnat.decode import DecodeParams, decode_corpus
from cassnat.models import load_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--bench", default="runs/bench")
    ap.add_argument("--taus", type=float, nargs="+", default=[0.5, 0.7, 0.9, 1.0])
    ap.add_argument("--samples", type=int, nargs="+", default=[1, 5, 20, 50])
    ap.add_argument("--split", default="dev")
    args = ap.parse_args()
    bench = Path(args.bench)
    corpus = load_corpus(bench / "corpus.bin")
    model = load_model(bench / "cassnat" / "final.ckpt").eval()
    scorer = load_model(bench / "at" / "final.ckpt").eval()
    rows = []
    print(f"{'tau':>5s} {'S':>4s} {'WER%':>6s} {'LPER%':>6s} {'ms/utt':>7s}")
    for tau in args.taus:
        for s in args.samples:
            _, summ = decode_corpus(model, scorer, corpus, args.split, DecodeParams(method="esa", tau=tau, samples=s))
            rows.append({"tau": tau, "samples": s, "wer": summ["wer"], "lper": summ["lper"],
                         "mean_time": summ["mean_time"]})
            print(f"{tau:5.2f} {s:4d} {100 * summ['wer']:6.2f} {100 * summ['lper']:6.2f} "
                  f"{1000 * summ['mean_time']:7.2f}")
    (bench / "esa_sweep.json").write_text(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()
