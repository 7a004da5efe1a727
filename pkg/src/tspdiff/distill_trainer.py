"""Teacher training on the noise-prediction objective, and progressive distillation.

Each distillation iteration initialises a student from the current teacher and
trains its single DDIM step t -> t - 1/N to land where two teacher steps
t -> t - 1/(2N) -> t - 1/N land. The student then becomes the teacher and N halves.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import denoiser
from .checkpoint import save_checkpoint
from .denoiser import DenoiserConfig, Params
from .diffusion_schedule import (Schedule, continuous_to_index, ddim_coefficients, ddim_step,
                                 forward_sample, make_schedule, rescale)
from .tsp_core import LabeledInstance, TspInstance, tour_to_solution

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    T: int = 1024
    optimizer: str = "sgd"
    dtype: str = "float32"
    augment: bool = False
    lr_schedule: str = "constant"  # or "cosine"
    log_every: int = 200

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.T) < 1 or self.lr <= 0:
            raise ValueError(f"training settings must be positive: {self}")


@dataclass
class DistillConfig:
    N: int = 64
    K: int = 2
    lr: float = 1e-3
    max_steps: int = 2000
    plateau_window: int = 200
    plateau_tol: float = 0.0  # 0 disables the plateau test
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd"
    dtype: str = "float32"

    def __post_init__(self):
        if self.N < 2 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 2, got {self.N}")
        if self.K < 1 or self.N >> (self.K - 1) < 1:
            raise ValueError(f"K={self.K} halvings of N={self.N} would drop below one step")
        if self.max_steps < 0 or self.batch_size < 1 or self.lr < 0 or self.plateau_window < 1:
            raise ValueError(f"invalid distillation settings: {self}")


@dataclass
class IterationRecord:
    iteration: int
    N: int
    resulting_N: int
    steps: int
    final_loss: float
    checkpoint: str | None = None


@dataclass
class DistillReport:
    iterations: list[IterationRecord] = field(default_factory=list)

    @property
    def N_sequence(self) -> list[int]:
        return [r.N for r in self.iterations]

    @property
    def lineage(self) -> list[str | None]:
        return [r.checkpoint for r in self.iterations]

    def to_dict(self) -> dict:
        return {"N_sequence": self.N_sequence, "iterations": [asdict(r) for r in self.iterations]}


def stack_dataset(dataset: Sequence[LabeledInstance]) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates (D, n, 2) and rescaled labels (D, N) of a same-size dataset."""
    if not dataset:
        raise ValueError("dataset is empty")
    if len({item.instance.n for item in dataset}) != 1:
        raise ValueError("all training instances must have the same vertex count")
    coords = np.stack([item.instance.coords for item in dataset])
    x0 = np.stack([rescale(tour_to_solution(item.instance, item.tour)) for item in dataset])
    return coords, x0


def scheduled_lr(base: float, kind: str, step: int, total: int) -> float:
    if kind == "constant":
        return base
    if kind == "cosine":
        return 0.5 * base * (1.0 + math.cos(math.pi * step / max(total, 1)))
    raise ValueError(f"unknown lr schedule {kind!r}")


def dihedral(coords, k) -> np.ndarray:
    """Apply one of the 8 symmetries of the unit square per instance; tours and edge weights are unchanged."""
    k = np.asarray(k)[:, None, None]
    x, y = coords[..., :1], coords[..., 1:]
    x, y = np.where(k & 4, y, x), np.where(k & 4, x, y)
    x = np.where(k & 1, 1.0 - x, x)
    y = np.where(k & 2, 1.0 - y, y)
    return np.concatenate([x, y], axis=-1)


def noise_loss_and_grad(params: Params, coords, x0, t, eps, schedule: Schedule):
    """Mean squared noise error over batch and edges, and its parameter gradient."""
    x_t = forward_sample(schedule, x0, t, eps)
    pred, cache = denoiser.forward_batch(params, coords, x_t, t / schedule.T, keep=True)
    diff = pred - eps
    loss = float(np.mean(diff * diff))
    grads = denoiser.backward_batch(params, cache, 2.0 * diff / diff.size)
    return loss, grads


def train_teacher(dataset: Sequence[LabeledInstance], config: TrainConfig, denoiser_config: DenoiserConfig,
                  init: Params | None = None, history: list | None = None) -> Params:
    coords, x0 = stack_dataset(dataset)
    schedule = make_schedule(config.T)
    rng = np.random.default_rng(config.seed)
    params = init if init is not None else denoiser.init_params(denoiser_config, config.seed)
    params = denoiser.cast_params(params, config.dtype)
    opt = denoiser.make_optimizer(config.optimizer, params, config.lr)
    D = len(x0)
    per_epoch = math.ceil(D / config.batch_size)
    step = 0
    total = config.epochs * per_epoch
    running = []
    for epoch in range(config.epochs):
        order = rng.permutation(D)
        for b in range(per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            t = rng.integers(1, schedule.T + 1, size=len(idx))
            eps = rng.standard_normal(x0[idx].shape)
            c = dihedral(coords[idx], rng.integers(8, size=len(idx))) if config.augment else coords[idx]
            loss, grads = noise_loss_and_grad(params, c, x0[idx], t, eps, schedule)
            opt.lr = scheduled_lr(config.lr, config.lr_schedule, step, total)
            params = opt.step(params, grads)
            running.append(loss)
            if history is not None:
                history.append(loss)
            step += 1
            if config.log_every and step % config.log_every == 0:
                log.info("teacher step %d epoch %d loss %.5f", step, epoch, np.mean(running))
                running = []
    return params


def distill_times(schedule: Schedule, i, N: int):
    """Table indices of t = i/N, t' = t - 1/(2N) and t'' = t - 1/N (``i`` may be an array)."""
    continuous_to_index(schedule, Fraction(1, 2 * N))  # divisibility check
    i = np.asarray(i)
    if np.any(i < 1) or np.any(i > N):
        raise ValueError(f"step index must be in 1..{N}")
    unit = schedule.T // (2 * N)
    return 2 * i * unit, (2 * i - 1) * unit, (2 * i - 2) * unit


def distill_loss_and_grad(teacher: Params, student: Params, coords, x0, i, eps, N: int, schedule: Schedule):
    """Batched distillation loss; the teacher's two-step target is a constant."""
    t, t_half, t_next = distill_times(schedule, i, N)
    x_t = forward_sample(schedule, x0, t, eps)
    T = schedule.T
    e1 = denoiser.forward_batch(teacher, coords, x_t, t / T)
    x_half = ddim_step(schedule, x_t, e1, t, t_half)
    e2 = denoiser.forward_batch(teacher, coords, x_half, t_half / T)
    target = ddim_step(schedule, x_half, e2, t_half, t_next)
    es, cache = denoiser.forward_batch(student, coords, x_t, t / T, keep=True)
    x_student = ddim_step(schedule, x_t, es, t, t_next)
    diff = x_student - target
    loss = float(np.mean(diff * diff))
    _, c_eps = ddim_coefficients(schedule, t, t_next, x_t.ndim)
    grads = denoiser.backward_batch(student, cache, 2.0 * diff * c_eps / diff.size)
    return loss, grads


def distill_step(teacher: Params, student: Params, instance: TspInstance, x0, i: int, N: int,
                 schedule: Schedule, seed) -> tuple[float, Params]:
    """Loss ||x_t'' - x~||^2 / num_edges for one instance and step index, with student gradients."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (instance.num_edges,):
        raise ValueError("x0 must have one entry per edge")
    eps = np.random.default_rng(seed).standard_normal(x0.shape)
    return distill_loss_and_grad(teacher, student, instance.coords[None], x0[None], np.array([i]),
                                 eps[None], N, schedule)


def _plateaued(losses: list[float], window: int, tol: float) -> bool:
    if tol <= 0 or len(losses) < 2 * window or len(losses) % window:
        return False
    prev = np.mean(losses[-2 * window:-window])
    last = np.mean(losses[-window:])
    return (prev - last) < tol * abs(prev)


def progressive_distill(teacher: Params, dataset: Sequence[LabeledInstance], config: DistillConfig,
                        schedule: Schedule, checkpoint_dir=None, denoiser_config: DenoiserConfig | None = None,
                        meta: dict | None = None) -> tuple[Params, DistillReport]:
    if schedule.T % (2 * config.N):
        raise ValueError(f"T={schedule.T} must be divisible by 2N={2 * config.N}")
    coords, x0 = stack_dataset(dataset)
    denoiser_config = denoiser_config or denoiser.config_from_params(teacher)
    report = DistillReport()
    current = denoiser.cast_params(teacher, config.dtype)
    N = config.N
    for k in range(1, config.K + 1):
        rng = np.random.default_rng([config.seed, k])
        student = denoiser.copy_params(current)
        opt = denoiser.make_optimizer(config.optimizer, student, config.lr)
        losses: list[float] = []
        for step in range(config.max_steps):
            idx = rng.integers(len(x0), size=config.batch_size)
            i = rng.integers(1, N + 1, size=config.batch_size)
            eps = rng.standard_normal(x0[idx].shape)
            loss, grads = distill_loss_and_grad(current, student, coords[idx], x0[idx], i, eps, N, schedule)
            student = opt.step(student, grads)
            losses.append(loss)
            if (step + 1) % 500 == 0:
                log.info("distill iteration %d N=%d step %d loss %.3e", k, N, step + 1,
                         np.mean(losses[-500:]))
            if _plateaued(losses, config.plateau_window, config.plateau_tol):
                break
        final = float(np.mean(losses[-config.plateau_window:])) if losses else float("nan")
        path = None
        if checkpoint_dir is not None:
            path = str(save_checkpoint(Path(checkpoint_dir) / f"student_{k}x", student, denoiser_config,
                                       {**(meta or {}), "distill_iteration": k, "N": N}))
        report.iterations.append(IterationRecord(iteration=k, N=N, resulting_N=N // 2, steps=len(losses),
                                                 final_loss=final, checkpoint=path))
        current = student
        N //= 2
    return current, report
