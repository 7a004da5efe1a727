"""Command-line driver: generate data, train a teacher, distill students, evaluate sweeps, plot.

    tspdiff generate --n 10 --count 200 --seed 1 --out train.jsonl
    tspdiff train    --config exp.json --data train.jsonl --out runs/teacher
    tspdiff distill  --config exp.json --teacher runs/teacher.json --data train.jsonl --out-dir runs
    tspdiff eval     --config exp.json --model teacher=runs/teacher.json --data test.jsonl --out runs/results.csv
    tspdiff plot     --csv runs/results.csv --out runs/results.svg
    tspdiff run      --config exp.json --out-dir runs      # everything above in one go
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
from pathlib import Path

import numpy as np

from . import denoiser
from .checkpoint import load_checkpoint, save_checkpoint
from .config import EvalConfig, ExperimentConfig
from .diffusion_schedule import Schedule, make_schedule
from .distill_trainer import progressive_distill, train_teacher
from .plot import render_svg
from .sampler import best_of, child_seed, sample_batch
from .tsp_core import LabeledInstance, cost_drop_pct, make_dataset, read_dataset, write_dataset

log = logging.getLogger("tspdiff")

CSV_HEADER = ["model_id", "inference_steps", "parallel_samples", "mean_drop_pct", "mean_cost", "mean_opt_cost",
              "n_instances", "mean_wall_ms"]


class CellError(ValueError):
    pass


# --- evaluation harness -------------------------------------------------------


def evaluate_cell(params, test: list[LabeledInstance], schedule: Schedule, M: int, S: int, eval_cfg: EvalConfig):
    """Best-of-S sampling on every test instance; returns (per-instance records, wall ms per instance)."""
    if M < 1 or schedule.T % M:
        raise CellError(f"M={M} does not divide T={schedule.T}")
    insts = [item.instance for item in test for _ in range(S)]
    seeds = [child_seed([eval_cfg.seed, k], s) for k in range(len(test)) for s in range(S)]
    repeats = eval_cfg.timing_repeats if eval_cfg.timing else 1
    walls = []
    for _ in range(repeats):
        results = sample_batch(params, insts, schedule, M, seeds, refine=eval_cfg.refine)
        walls.append(results[0].wall_time * S)
    wall = statistics.median(walls) if eval_cfg.timing else 0.0
    records = []
    for k, item in enumerate(test):
        best = best_of(results[k * S:(k + 1) * S])
        records.append({
            "instance": k,
            "cost": best.tour.cost,
            "opt_cost": item.tour.cost,
            "drop_pct": cost_drop_pct(best.tour.cost, item.tour.cost),
            "wall_ms": wall,
            "tour": list(best.tour.perm),
        })
    return records, wall


def aggregate(records: list[dict]) -> list[dict]:
    """One CSV row per (model, M, S) cell, in first-seen order."""
    cells: dict[tuple, list[dict]] = {}
    for r in records:
        cells.setdefault((r["model_id"], r["inference_steps"], r["parallel_samples"]), []).append(r)
    rows = []
    for (model_id, M, S), rs in cells.items():
        k = len(rs)
        rows.append({
            "model_id": model_id,
            "inference_steps": M,
            "parallel_samples": S,
            "mean_drop_pct": sum(r["drop_pct"] for r in rs) / k,
            "mean_cost": sum(r["cost"] for r in rs) / k,
            "mean_opt_cost": sum(r["opt_cost"] for r in rs) / k,
            "n_instances": k,
            "mean_wall_ms": sum(r["wall_ms"] for r in rs) / k,
        })
    return rows


def evaluate(models: dict[str, dict], test: list[LabeledInstance], schedule: Schedule, eval_cfg: EvalConfig):
    """Sweep models x steps x parallel samples. Returns (records, failed cells)."""
    records, failures = [], []
    for model_id, params in models.items():
        for M in eval_cfg.steps:
            for S in eval_cfg.parallel:
                try:
                    cell, wall = evaluate_cell(params, test, schedule, M, S, eval_cfg)
                except CellError as exc:
                    failures.append({"model_id": model_id, "inference_steps": M, "parallel_samples": S,
                                     "error": str(exc)})
                    continue
                for r in cell:
                    records.append({"model_id": model_id, "inference_steps": M, "parallel_samples": S, **r})
                drop = sum(r["drop_pct"] for r in cell) / len(cell)
                log.info("eval %s M=%d S=%d drop=%.3f%% wall=%.2fms", model_id, M, S, drop, wall)
    return records, failures


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in CSV_HEADER])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        for k in ("inference_steps", "parallel_samples", "n_instances"):
            r[k] = int(r[k])
        for k in ("mean_drop_pct", "mean_cost", "mean_opt_cost", "mean_wall_ms"):
            r[k] = float(r[k])
    return rows


def write_audit(records: list[dict], path, config: dict) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"config": config}) + "\n")
        for r in records:
            f.write(json.dumps(r) + "\n")


def read_audit(path) -> tuple[dict, list[dict]]:
    lines = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    return lines[0]["config"], lines[1:]


def check_disjoint(meta: dict, test: list[LabeledInstance], model_id: str) -> None:
    seen = set(meta.get("train_fingerprints", []))
    overlap = [k for k, item in enumerate(test) if item.instance.fingerprint() in seen]
    if overlap:
        raise ValueError(f"{model_id} was trained on {len(overlap)} of the evaluation instances "
                         f"(first index {overlap[0]})")


# --- commands -----------------------------------------------------------------


def cmd_generate(n: int, count: int, seed: int, out) -> list[LabeledInstance]:
    if n < 3 or count < 1:
        raise ValueError("need n >= 3 and count >= 1")
    data = make_dataset(n, count, seed)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, data)
    return data


def cmd_train(cfg: ExperimentConfig, data_path, out) -> Path:
    data = read_dataset(data_path)
    history: list[float] = []
    params = train_teacher(data, cfg.train, cfg.denoiser, history=history)
    meta = {
        "role": "teacher",
        "config": cfg.to_dict(),
        "final_loss": float(np.mean(history[-200:])),
        "train_fingerprints": [item.instance.fingerprint() for item in data],
    }
    return save_checkpoint(out, params, cfg.denoiser, meta)


def cmd_distill(cfg: ExperimentConfig, teacher_path, data_path, out_dir) -> dict:
    data = read_dataset(data_path)
    ck = load_checkpoint(teacher_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fingerprints = sorted(set(ck.meta.get("train_fingerprints", []))
                          | {item.instance.fingerprint() for item in data})
    meta = {"role": "student", "config": cfg.to_dict(), "teacher": str(teacher_path),
            "train_fingerprints": fingerprints}
    _, report = progressive_distill(ck.params, data, cfg.distill, make_schedule(cfg.schedule.T),
                                    checkpoint_dir=out_dir, denoiser_config=ck.config, meta=meta)
    doc = {"config": cfg.to_dict(), "teacher": str(teacher_path), **report.to_dict()}
    (out_dir / "distill_report.json").write_text(json.dumps(doc, indent=2) + "\n")
    return doc


def cmd_eval(cfg: ExperimentConfig, model_paths: dict[str, str], data_path, out_csv, audit_path=None,
             plot_path=None) -> tuple[list[dict], list[dict]]:
    test = read_dataset(data_path)
    models = {}
    for model_id, path in model_paths.items():
        ck = load_checkpoint(path)
        check_disjoint(ck.meta, test, model_id)
        models[model_id] = ck.params
    records, failures = evaluate(models, test, make_schedule(cfg.schedule.T), cfg.eval)
    rows = aggregate(records)
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out_csv)
    # CSV carries no comments; its config travels in a sidecar and in the audit header
    Path(str(out_csv) + ".config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    write_audit(records, audit_path or out_csv.with_suffix(".audit.jsonl"), cfg.to_dict())
    if plot_path:
        Path(plot_path).write_text(render_svg(rows))
    return rows, failures


def cmd_plot(csv_path, out) -> None:
    Path(out).write_text(render_svg(read_csv(csv_path)))


def run_pipeline(cfg: ExperimentConfig, out_dir) -> dict:
    """Generate, train, distill and evaluate; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    d = cfg.data
    cmd_generate(d.n, d.train_count, d.train_seed, out / "train.jsonl")
    cmd_generate(d.n, d.test_count, d.test_seed, out / "test.jsonl")
    teacher = cmd_train(cfg, out / "train.jsonl", out / "teacher")
    report = cmd_distill(cfg, teacher, out / "train.jsonl", out)
    models = {"teacher": str(teacher)}
    for it in report["iterations"]:
        models[f"{it['iteration']}x_student"] = it["checkpoint"]
    _, failures = cmd_eval(cfg, models, out / "test.jsonl", out / "results.csv", out / "results.audit.jsonl",
                           out / "results.svg")
    if failures:
        raise ValueError(f"{len(failures)} evaluation cells failed: {failures[0]['error']}")
    return {"csv": out / "results.csv", "audit": out / "results.audit.jsonl", "report": out / "distill_report.json",
            "teacher": teacher, "models": models}


# --- argument parsing -----------------------------------------------------------


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return cfg.override(args.set or [])


def _parse_models(items: list[str]) -> dict[str, str]:
    models = {}
    for item in items:
        model_id, sep, path = item.partition("=")
        if not sep:
            raise ValueError(f"--model expects id=path, got {item!r}")
        models[model_id] = path
    return models


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tspdiff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="experiment JSON (defaults used when omitted)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        return p

    p = sub.add_parser("generate", help="write a labelled JSONL dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = with_config(sub.add_parser("train", help="train a teacher denoiser"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (manifest .json + .bin)")

    p = with_config(sub.add_parser("distill", help="progressive distillation from a teacher checkpoint"))
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)

    p = with_config(sub.add_parser("eval", help="evaluate checkpoints over the step/sample grid"))
    p.add_argument("--model", action="append", required=True, metavar="ID=PATH")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--audit", help="per-instance JSONL (default: next to the CSV)")
    p.add_argument("--plot", help="optional SVG path")

    p = sub.add_parser("plot", help="render an SVG from an eval CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)

    p = with_config(sub.add_parser("run", help="full pipeline into one directory"))
    p.add_argument("--out-dir", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    failures = []
    try:
        if args.command == "generate":
            cmd_generate(args.n, args.count, args.seed, args.out)
        elif args.command == "train":
            cmd_train(_load_config(args), args.data, args.out)
        elif args.command == "distill":
            cmd_distill(_load_config(args), args.teacher, args.data, args.out_dir)
        elif args.command == "eval":
            _, failures = cmd_eval(_load_config(args), _parse_models(args.model), args.data, args.out,
                                   args.audit, args.plot)
        elif args.command == "plot":
            cmd_plot(args.csv, args.out)
        elif args.command == "run":
            run_pipeline(_load_config(args), args.out_dir)
    except Exception as exc:  # reported as one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    for f in failures:
        print(json.dumps({"error": "CellError", **f}), file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
