"""Linear noise schedule and the forward (noising) process."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_BETA_START = 1e-4

# Desk-scale default: 200 steps, with the endpoint chosen so the terminal
# signal level matches the classic 1000-step, 1e-4..0.02 schedule (~4e-5).
DEFAULT_K = 200
DEFAULT_BETA_END = 0.0977

FULL_K = 1000
FULL_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise levels; index k-1 holds the value for step k in 1..K."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    @property
    def num_steps(self) -> int:
        return self.beta.shape[0]

    def alpha_bar_at(self, k: int) -> float:
        """Cumulative signal level at step k, with step 0 defined as 1."""
        if not 0 <= k <= self.num_steps:
            raise ValueError(f"schedule: step {k} outside [0, {self.num_steps}]")
        return 1.0 if k == 0 else float(self.alpha_bar[k - 1])


def build_schedule(
    num_steps: int = DEFAULT_K,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float | None = None,
) -> NoiseSchedule:
    """Linear beta ramp from beta_start to beta_end over num_steps steps.

    When beta_end is omitted it defaults to the desk-scale endpoint for
    num_steps=200 and to 0.02 for num_steps=1000.
    """
    if num_steps < 1:
        raise ValueError(f"schedule: need at least 1 step, got {num_steps}")
    if beta_end is None:
        beta_end = FULL_BETA_END if num_steps == FULL_K else DEFAULT_BETA_END
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"schedule: need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar, posterior_var=posterior_var)


def forward_sample(x0: np.ndarray, k: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Noise x0 directly to step k: sqrt(abar_k) x0 + sqrt(1 - abar_k) eps."""
    if not 1 <= k <= schedule.num_steps:
        raise ValueError(f"forward_sample: step {k} outside [1, {schedule.num_steps}]")
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if eps.shape != x0.shape:
        raise ValueError(f"forward_sample: eps shape {eps.shape} does not match x0 shape {x0.shape}")
    ab = schedule.alpha_bar_at(k)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
