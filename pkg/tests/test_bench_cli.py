import json

import numpy as np
import pytest

from tspdiff import bench_cli as B
from tspdiff import denoiser as D
from tspdiff.checkpoint import save_checkpoint
from tspdiff.config import ExperimentConfig
from tspdiff.tsp_core import read_dataset

SMALL = D.DenoiserConfig(layers=2, width=16, time_embed_dim=16, input_freqs=2)

TINY = {
    "data": {"n": 6, "train_count": 12, "train_seed": 1, "test_count": 5, "test_seed": 2},
    "denoiser": {"layers": 2, "width": 16, "time_embed_dim": 16, "input_freqs": 2},
    "train": {"epochs": 4, "batch_size": 4, "optimizer": "adam"},
    "distill": {"N": 8, "K": 2, "max_steps": 3, "batch_size": 4},
    "eval": {"steps": [4, 8], "parallel": [1, 2], "timing": False},
}


def live_checkpoint(path, seed, meta=None):
    rng = np.random.default_rng(seed)
    p = {k: v + 0.3 * rng.standard_normal(v.shape) for k, v in D.init_params(SMALL, seed).items()}
    return save_checkpoint(path, D.cast_params(p, np.float32), SMALL, meta or {"train_fingerprints": []})


@pytest.fixture(scope="module")
def test_set(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "test.jsonl"
    B.cmd_generate(6, 5, 2, path)
    return path


def test_generate_exact_labels_and_bytes(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert B.main(["generate", "--n", "10", "--count", "200", "--seed", "1", "--out", str(a)]) == 0
    B.main(["generate", "--n", "10", "--count", "200", "--seed", "1", "--out", str(b)])
    lines = a.read_text().splitlines()
    assert len(lines) == 200
    assert all(json.loads(line)["label_kind"] == "exact" for line in lines)
    assert a.read_bytes() == b.read_bytes()


def test_generate_large_n_uses_heuristic_labels(tmp_path):
    data = B.cmd_generate(50, 3, 0, tmp_path / "big.jsonl")
    assert all(item.label_kind == "2opt" for item in data)


@pytest.mark.parametrize("argv", [["--n", "2", "--count", "5"], ["--n", "5", "--count", "0"]])
def test_generate_rejects_bad_sizes(tmp_path, argv, capsys):
    assert B.main(["generate", *argv, "--seed", "0", "--out", str(tmp_path / "x.jsonl")]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ValueError"


def test_eval_grid_is_full_and_recomputable(tmp_path, test_set):
    models = {"teacher": str(live_checkpoint(tmp_path / "t", 0)), "2x_student": str(live_checkpoint(tmp_path / "s", 1))}
    cfg = ExperimentConfig().override(["eval.timing=false"])
    rows, failures = B.cmd_eval(cfg, models, test_set, tmp_path / "res.csv", plot_path=tmp_path / "res.svg")
    assert not failures
    assert len(rows) == 20
    assert (tmp_path / "res.csv").read_text().splitlines()[0] == ",".join(B.CSV_HEADER)

    config, records = B.read_audit(tmp_path / "res.audit.jsonl")
    assert config == cfg.to_dict()
    assert json.loads((tmp_path / "res.csv.config.json").read_text()) == cfg.to_dict()
    for row in B.read_csv(tmp_path / "res.csv"):
        cell = [r for r in records if (r["model_id"], r["inference_steps"], r["parallel_samples"])
                == (row["model_id"], row["inference_steps"], row["parallel_samples"])]
        assert len(cell) == row["n_instances"] == 5
        assert abs(row["mean_drop_pct"] - np.mean([r["drop_pct"] for r in cell])) < 1e-9
        assert abs(row["mean_cost"] - np.mean([r["cost"] for r in cell])) < 1e-9
    assert (tmp_path / "res.svg").read_text().startswith("<svg")


def test_eval_is_deterministic(tmp_path, test_set):
    models = {"teacher": str(live_checkpoint(tmp_path / "t", 0))}
    cfg = ExperimentConfig().override(["eval.timing=false", "eval.steps=[64]"])
    B.cmd_eval(cfg, models, test_set, tmp_path / "a.csv")
    B.cmd_eval(cfg, models, test_set, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_best_of_more_samples_never_worse(tmp_path, test_set):
    models = {"teacher": str(live_checkpoint(tmp_path / "t", 2))}
    cfg = ExperimentConfig().override(["eval.timing=false", "eval.steps=[8]", "eval.parallel=[1, 4]"])
    _, _ = B.cmd_eval(cfg, models, test_set, tmp_path / "r.csv")
    _, records = B.read_audit(tmp_path / "r.audit.jsonl")
    one = {r["instance"]: r["cost"] for r in records if r["parallel_samples"] == 1}
    four = {r["instance"]: r["cost"] for r in records if r["parallel_samples"] == 4}
    assert all(four[k] <= one[k] for k in one)


def test_timing_reports_positive_wall(tmp_path, test_set):
    models = {"teacher": str(live_checkpoint(tmp_path / "t", 0))}
    cfg = ExperimentConfig().override(["eval.steps=[4]", "eval.parallel=[1]"])
    rows, _ = B.cmd_eval(cfg, models, test_set, tmp_path / "r.csv")
    assert rows[0]["mean_wall_ms"] > 0


def test_bad_step_count_fails_only_its_cell(tmp_path, test_set, capsys):
    ck = live_checkpoint(tmp_path / "t", 0)
    argv = ["eval", "--model", f"teacher={ck}", "--data", str(test_set), "--out", str(tmp_path / "r.csv"),
            "--set", "eval.steps=[4, 3]", "--set", "eval.parallel=[1]", "--set", "eval.timing=false"]
    assert B.main(argv) == 1
    errors = [json.loads(line) for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    assert [e["inference_steps"] for e in errors] == [3]
    assert len(B.read_csv(tmp_path / "r.csv")) == 1


def test_missing_checkpoint_is_an_error(tmp_path, test_set, capsys):
    argv = ["eval", "--model", f"teacher={tmp_path / 'nope'}", "--data", str(test_set), "--out",
            str(tmp_path / "r.csv")]
    assert B.main(argv) == 1
    assert "error" in json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_eval_refuses_training_instances(tmp_path, test_set):
    fingerprints = [read_dataset(test_set)[3].instance.fingerprint()]
    ck = live_checkpoint(tmp_path / "t", 0, {"train_fingerprints": fingerprints})
    with pytest.raises(ValueError, match="trained on 1"):
        B.cmd_eval(ExperimentConfig(), {"teacher": str(ck)}, test_set, tmp_path / "r.csv")


def test_plot_subcommand(tmp_path):
    rows = [{"model_id": m, "inference_steps": M, "parallel_samples": S, "mean_drop_pct": 1.0 + M / 10,
             "mean_cost": 1.0, "mean_opt_cost": 1.0, "n_instances": 1, "mean_wall_ms": 0.0}
            for m in ("teacher", "2x_student") for M in (4, 8) for S in (1, 4)]
    B.write_csv(rows, tmp_path / "r.csv")
    assert B.main(["plot", "--csv", str(tmp_path / "r.csv"), "--out", str(tmp_path / "r.svg")]) == 0
    svg = (tmp_path / "r.svg").read_text()
    assert svg.count("<polyline") == 4 and "2x_student" in svg


def test_run_pipeline_end_to_end(tmp_path):
    cfg_path = tmp_path / "tiny.json"
    cfg_path.write_text(json.dumps(TINY))
    assert B.main(["run", "--config", str(cfg_path), "--out-dir", str(tmp_path / "a")]) == 0
    rows = B.read_csv(tmp_path / "a" / "results.csv")
    assert {r["model_id"] for r in rows} == {"teacher", "1x_student", "2x_student"}
    assert len(rows) == 12
    report = json.loads((tmp_path / "a" / "distill_report.json").read_text())
    assert report["N_sequence"] == [8, 4]
    assert report["config"]["data"] == TINY["data"]
    assert ExperimentConfig.load(tmp_path / "a" / "config.json") == ExperimentConfig.from_dict(TINY)

    assert B.main(["run", "--config", str(cfg_path), "--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
