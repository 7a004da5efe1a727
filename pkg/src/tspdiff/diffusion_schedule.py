"""Closed-form diffusion machinery: linear beta schedule, forward corruption, DDIM steps, time grids."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

BETA_START = 1e-4
BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class Schedule:
    """``beta[t-1]`` is beta_t for t = 1..T; ``alpha_bar[t]`` is indexed directly, with alpha_bar[0] = 1."""

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def alpha(self, t_frac) -> float:
        """Signal scale sqrt(alpha_bar) at a continuous time in (0, 1]."""
        return float(np.sqrt(self.alpha_bar[continuous_to_index(self, t_frac)]))

    def sigma(self, t_frac) -> float:
        """Noise scale sqrt(1 - alpha_bar) at a continuous time in (0, 1]."""
        return float(np.sqrt(1.0 - self.alpha_bar[continuous_to_index(self, t_frac)]))


@dataclass(frozen=True)
class TimeGrid:
    """Decreasing timesteps, the last entry being the target 0."""

    indices: tuple[int, ...]

    @property
    def steps(self) -> list[tuple[int, int]]:
        return list(zip(self.indices[:-1], self.indices[1:]))

    def __len__(self) -> int:
        return len(self.indices) - 1


def make_schedule(T: int = 1024, beta_start: float = BETA_START, beta_end: float = BETA_END) -> Schedule:
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    beta = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    beta.setflags(write=False)
    alpha_bar.setflags(write=False)
    return Schedule(T=T, beta=beta, alpha_bar=alpha_bar)


def rescale(x) -> np.ndarray:
    return 2.0 * np.asarray(x, dtype=np.float64) - 1.0


def unrescale(v) -> np.ndarray:
    return (np.asarray(v, dtype=np.float64) + 1.0) / 2.0


def _coef(schedule: Schedule, t, ndim: int) -> np.ndarray:
    # per-row coefficient for a batch of timesteps, broadcast over the edge axis
    a = schedule.alpha_bar[np.asarray(t)]
    if np.ndim(a) and ndim > 1:
        a = a.reshape(a.shape + (1,) * (ndim - 1))
    return a


def _check_range(t, lo: int, hi: int, what: str) -> None:
    t = np.asarray(t)
    if np.any(t < lo) or np.any(t > hi):
        raise ValueError(f"{what} must be in [{lo}, {hi}], got {t}")


def forward_sample(schedule: Schedule, x0, t, eps) -> np.ndarray:
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps; ``t`` may be one timestep per leading row."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    _check_range(t, 1, schedule.T, "t")
    a = _coef(schedule, t, x0.ndim)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def ddim_coefficients(schedule: Schedule, t_src, t_dst, ndim: int = 1):
    """(c_x, c_eps) such that ddim_step(x, eps) = c_x * x + c_eps * eps."""
    t_src = np.asarray(t_src)
    t_dst = np.asarray(t_dst)
    _check_range(t_src, 1, schedule.T, "t_src")
    _check_range(t_dst, 0, schedule.T, "t_dst")
    if np.any(t_dst >= t_src):
        raise ValueError(f"DDIM step must go backwards in time: t_src={t_src}, t_dst={t_dst}")
    a_src = _coef(schedule, t_src, ndim)
    a_dst = _coef(schedule, t_dst, ndim)
    ratio = np.sqrt(a_dst / a_src)
    return ratio, np.sqrt(1.0 - a_dst) - ratio * np.sqrt(1.0 - a_src)


def ddim_step(schedule: Schedule, x_src, eps_hat, t_src, t_dst) -> np.ndarray:
    """Deterministic DDIM jump from ``t_src`` to ``t_dst`` (any t_dst < t_src, 0 allowed)."""
    x_src = np.asarray(x_src, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    ratio, _ = ddim_coefficients(schedule, t_src, t_dst, x_src.ndim)
    a_src = _coef(schedule, t_src, x_src.ndim)
    a_dst = _coef(schedule, t_dst, x_src.ndim)
    return ratio * (x_src - np.sqrt(1.0 - a_src) * eps_hat) + np.sqrt(1.0 - a_dst) * eps_hat


def continuous_to_index(schedule: Schedule, t) -> int:
    """Map t in (0, 1] to the table index t*T; t*T must be an integer."""
    frac = Fraction(t) if not isinstance(t, float) else Fraction(t).limit_denominator(1 << 20)
    if not 0 < frac <= 1:
        raise ValueError(f"continuous time must lie in (0, 1], got {t}")
    idx = frac * schedule.T
    if idx.denominator != 1:
        raise ValueError(
            f"t*T = {float(idx)} is not an integer; T={schedule.T} must be divisible by the time grid "
            "(for distillation, T must be divisible by 2N)"
        )
    return int(idx)


def linear_skip_grid(schedule: Schedule, M: int) -> TimeGrid:
    if M < 1 or schedule.T % M:
        raise ValueError(f"inference steps M={M} must be >= 1 and divide T={schedule.T}")
    stride = schedule.T // M
    return TimeGrid(tuple(range(schedule.T, -1, -stride)))


def quantize(x0_hat) -> np.ndarray:
    """Edge scores (x0 + 1) / 2; decoding only depends on their ranking."""
    return unrescale(x0_hat)
