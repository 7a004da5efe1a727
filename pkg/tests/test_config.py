import json

import pytest

from tspdiff.config import DataConfig, ExperimentConfig


def test_round_trip(tmp_path):
    cfg = ExperimentConfig().override(["eval.steps=[4, 16]", "train.lr=0.002", "denoiser.width=32"])
    cfg.dump(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg
    assert cfg.eval.steps == (4, 16) and cfg.train.lr == 0.002 and cfg.denoiser.width == 32


def test_partial_document_fills_defaults():
    cfg = ExperimentConfig.from_dict({"distill": {"K": 1}})
    assert cfg.distill.K == 1 and cfg.data == DataConfig()


def test_schedule_owns_T():
    cfg = ExperimentConfig.from_dict({"schedule": {"T": 512}, "train": {"T": 1024}})
    assert cfg.train.T == 512


@pytest.mark.parametrize("doc", [{"bogus": {}}, {"train": {"lrate": 1}}])
def test_unknown_keys_rejected(doc):
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict(doc)


@pytest.mark.parametrize("item", ["train.lr", "lr=1", "nope.x=1"])
def test_bad_overrides(item):
    with pytest.raises(ValueError):
        ExperimentConfig().override([item])


def test_string_override_and_validation():
    assert ExperimentConfig().override(["train.optimizer=adam"]).train.optimizer == "adam"
    with pytest.raises(ValueError):
        ExperimentConfig().override(["data.test_seed=1"])


def test_dict_is_json():
    json.dumps(ExperimentConfig().to_dict())
