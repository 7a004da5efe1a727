"""DDIM inference from pure noise along a linear-skip grid, best-of-S sampling, and tour decoding."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from . import denoiser
from .diffusion_schedule import Schedule, ddim_step, linear_skip_grid, quantize
from .tsp_core import Tour, TspInstance, decode_heatmap

# eps_model(coords (B, n, 2), x (B, N), t_frac (B,)) -> (B, N)
EpsModel = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
Model = Union[denoiser.Params, EpsModel]


@dataclass
class SampleResult:
    tour: Tour
    raw_x0: np.ndarray
    steps_used: int
    wall_time: float  # milliseconds


def as_eps_model(model: Model) -> EpsModel:
    if callable(model):
        return model
    return lambda coords, x, t: denoiser.forward_batch(model, coords, x, t)


def child_seed(seed, index: int) -> list[int]:
    """Seed for parallel chain ``index``; independent of evaluation order."""
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return base + [int(index)]


def initial_noise(num_edges: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(num_edges)


def denoise(model: Model, coords, x_T, schedule: Schedule, M: int) -> np.ndarray:
    """Run the DDIM chain for a batch (B, N) of starting points; returns x0 estimates."""
    eps_model = as_eps_model(model)
    grid = linear_skip_grid(schedule, M)
    x = np.array(x_T, dtype=np.float64)
    B = x.shape[0]
    for t_src, t_dst in grid.steps:
        eps = eps_model(coords, x, np.full(B, t_src / schedule.T))
        x = ddim_step(schedule, x, eps, t_src, t_dst)
    return x


def sample_batch(model: Model, instances: Sequence[TspInstance], schedule: Schedule, M: int,
                 seeds: Sequence, refine: bool = False) -> list[SampleResult]:
    """One chain per (instance, seed) pair, evaluated together; instances must share n.

    ``wall_time`` of each result is the batch time divided by the batch size.
    """
    if len(instances) != len(seeds):
        raise ValueError("need exactly one seed per instance")
    if len({inst.n for inst in instances}) != 1:
        raise ValueError("batched sampling needs instances of equal size")
    linear_skip_grid(schedule, M)
    start = time.perf_counter()
    coords = np.stack([inst.coords for inst in instances])
    x_T = np.stack([initial_noise(inst.num_edges, s) for inst, s in zip(instances, seeds)])
    x0 = denoise(model, coords, x_T, schedule, M)
    tours = [decode_heatmap(inst, quantize(row), refine=refine) for inst, row in zip(instances, x0)]
    per = 1000.0 * (time.perf_counter() - start) / len(instances)
    return [SampleResult(tour=t, raw_x0=row, steps_used=M, wall_time=per) for t, row in zip(tours, x0)]


def sample(model: Model, instance: TspInstance, schedule: Schedule, M: int, seed,
           refine: bool = False) -> SampleResult:
    return sample_batch(model, [instance], schedule, M, [seed], refine=refine)[0]


def best_of(results: Sequence[SampleResult]) -> SampleResult:
    """Lowest tour cost; ties go to the lower sample index."""
    return min(enumerate(results), key=lambda ir: (ir[1].tour.cost, ir[0]))[1]


def sample_parallel(model: Model, instance: TspInstance, schedule: Schedule, M: int, S: int, seed,
                    refine: bool = False) -> SampleResult:
    if S < 1:
        raise ValueError(f"number of parallel samples must be >= 1, got {S}")
    start = time.perf_counter()
    results = sample_batch(model, [instance] * S, schedule, M, [child_seed(seed, s) for s in range(S)],
                           refine=refine)
    best = best_of(results)
    best.wall_time = 1000.0 * (time.perf_counter() - start)
    return best
