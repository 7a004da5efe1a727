"""Run the desk-scale step-count experiment end to end and print the drop tables.

    python3 scripts/run_experiment.py --config configs/tsp10_distill.json --out-dir runs/tsp10
    python3 scripts/run_experiment.py --out-dir runs/quick --set train.epochs=300 --set distill.max_steps=200

Writes everything ``tspdiff run`` writes (datasets, checkpoints, distill report,
results.csv, per-instance audit, results.svg) and prints one table per parallel
sample count: rows are models, columns are inference steps.
"""
import argparse
import logging
import time
from pathlib import Path

from tspdiff.bench_cli import read_csv, run_pipeline
from tspdiff.config import ExperimentConfig

ROOT = Path(__file__).resolve().parents[1]


def print_tables(rows):
    steps = sorted({r["inference_steps"] for r in rows})
    models = list(dict.fromkeys(r["model_id"] for r in rows))
    for S in sorted({r["parallel_samples"] for r in rows}):
        print(f"\nmean drop % (best of {S})")
        print("model".ljust(12) + "".join(f"M={M}".rjust(9) for M in steps))
        for m in models:
            cells = {r["inference_steps"]: r["mean_drop_pct"] for r in rows
                     if r["model_id"] == m and r["parallel_samples"] == S}
            print(m.ljust(12) + "".join(f"{cells[M]:9.3f}" if M in cells else " " * 9 for M in steps))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "tsp10_distill.json"))
    ap.add_argument("--out-dir", default="runs/tsp10")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.load(args.config).override(args.set)
    start = time.perf_counter()
    out = run_pipeline(cfg, args.out_dir)
    print(f"finished in {time.perf_counter() - start:.0f}s, results in {out['csv']}")
    print_tables(read_csv(out["csv"]))


if __name__ == "__main__":
    main()
