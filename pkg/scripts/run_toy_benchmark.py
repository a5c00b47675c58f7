"""Train the toy AT and CASS-NAT models and decode the dev split every way.

    python3 scripts/run_toy_benchmark.py --out runs/bench

Finished pieces under --out are reused, so a second call only decodes.
"""

import argparse

from cassnat.benchmark import BenchmarkConfig, run_benchmark


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/bench")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rep = run_benchmark(args.out, BenchmarkConfig(seed=args.seed), verbose=True)
    print(f"\n{'run':8s} {'WER%':>6s} {'MR%':>6s} {'LPER%':>6s} {'ms/utt':>7s} {'vs AT':>6s}")
    for name, wer in rep["wer"].items():
        mr, lper = rep["mr"][name], rep["lper"][name]
        print(f"{name:8s} {100 * wer:6.2f} {'-' if mr is None else f'{100 * mr:.2f}':>6s} "
              f"{'-' if lper is None else f'{100 * lper:.2f}':>6s} {1000 * rep['mean_time'][name]:7.2f} "
              f"{rep['speedup_vs_at_beam'][name]:5.2f}x")
    for name, s in rep["stress"].items():
        print(f"noisier dev, {name}: WER {100 * s['wer']:.2f}%  LPER {100 * s['lper']:.2f}%")
    print(f"total {rep['total_seconds'] / 60:.1f} min")


if __name__ == "__main__":
    main()
