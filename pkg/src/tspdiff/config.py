"""Experiment configuration: one JSON document with sections data/schedule/denoiser/train/distill/eval."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .denoiser import DenoiserConfig
from .distill_trainer import DistillConfig, TrainConfig


@dataclass(frozen=True)
class DataConfig:
    n: int = 10
    train_count: int = 200
    train_seed: int = 1
    test_count: int = 100
    test_seed: int = 2

    def __post_init__(self):
        if self.train_seed == self.test_seed:
            raise ValueError("train and test sets must come from different seeds")


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 1024


@dataclass(frozen=True)
class EvalConfig:
    steps: tuple[int, ...] = (4, 8, 16, 32, 64)
    parallel: tuple[int, ...] = (1, 4)
    seed: int = 0
    timing: bool = True
    timing_repeats: int = 3
    refine: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval"]["steps"] = list(self.eval.steps)
        d["eval"]["parallel"] = list(self.eval.parallel)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        sections = {}
        for f in fields(cls):
            raw = dict(d.get(f.name, {}))
            if f.name == "eval":
                for key in ("steps", "parallel"):
                    if key in raw:
                        raw[key] = tuple(raw[key])
            section_cls = f.default_factory
            known = {g.name for g in fields(section_cls)}
            unknown = set(raw) - known
            if unknown:
                raise ValueError(f"unknown keys in [{f.name}]: {sorted(unknown)}")
            sections[f.name] = section_cls(**raw)
        unknown = set(d) - set(sections)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(**sections)
        # the schedule section owns T
        return replace(cfg, train=replace(cfg.train, T=cfg.schedule.T))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def override(self, assignments: list[str]) -> "ExperimentConfig":
        """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
        d = self.to_dict()
        for item in assignments:
            key, sep, value = item.partition("=")
            section, dot, name = key.partition(".")
            if not sep or not dot:
                raise ValueError(f"override must look like section.key=value, got {item!r}")
            if section not in d:
                raise ValueError(f"unknown config section {section!r}")
            try:
                d[section][name] = json.loads(value)
            except json.JSONDecodeError:
                d[section][name] = value
        return ExperimentConfig.from_dict(d)
