"""Forward-noising schedule and the closed-form q_sample.

Steps are 1-indexed: alpha(t) and alpha_bar(t) are defined for t in 1..T,
with the step-0 convention alpha_bar(0) = 1 (no noise). The closed form
z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps collapses the per-step
recurrence z_t = sqrt(alpha_t) z_{t-1} + sqrt(1 - alpha_t) eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ConfigError, DataError

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class DiffusionSchedule:
    kind: str
    alpha: np.ndarray  # (T,), alpha[t-1] is alpha_t
    alpha_bar: np.ndarray  # (T,), cumulative products

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        abar = np.asarray(self.alpha_bar, dtype=np.float64)
        if alpha.ndim != 1 or alpha.shape != abar.shape or alpha.size < 1:
            raise ConfigError("alpha and alpha_bar must be equal-length 1-D arrays")
        if np.any(alpha <= 0) or np.any(alpha >= 1):
            raise ConfigError("every alpha_t must lie in (0, 1)")
        if abar.size > 1 and np.any(np.diff(abar) >= 0):
            raise ConfigError("alpha_bar must be strictly decreasing")
        if not np.allclose(abar, np.cumprod(alpha)):
            raise ConfigError("alpha_bar is not the cumulative product of alpha")
        alpha = alpha.copy()
        abar = abar.copy()
        alpha.setflags(write=False)
        abar.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", abar)

    @property
    def t_steps(self) -> int:
        return self.alpha.size

    def a_bar(self, t: int) -> float:
        """alpha_bar at step t, with a_bar(0) = 1."""
        if not 0 <= t <= self.t_steps:
            raise DataError(f"step {t} outside 0..{self.t_steps}")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def config(self) -> dict:
        return {"kind": self.kind, "t_steps": self.t_steps}


def make_schedule(
    kind: str = "linear",
    t_steps: int = 1000,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> DiffusionSchedule:
    if t_steps < 1:
        raise ConfigError(f"t_steps must be >= 1, got {t_steps}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, t_steps)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - betas
    return DiffusionSchedule(kind, alpha, np.cumprod(alpha))


def q_sample(z0, t: int, eps, sched: DiffusionSchedule):
    """Noise a clean latent to step t: sqrt(abar_t) z0 + sqrt(1-abar_t) eps.

    Works on numpy arrays and torch tensors alike; eps must share z0's shape.
    """
    if tuple(z0.shape) != tuple(eps.shape):
        raise DataError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    abar = sched.a_bar(t)
    return math.sqrt(abar) * z0 + math.sqrt(1.0 - abar) * eps


def iterate_recurrence(z0, t: int, eps_draws, sched: DiffusionSchedule):
    """Reference oracle: apply the per-step recurrence t times.

    eps_draws is a length-t sequence of independent noise arrays; the result
    is distributed identically to q_sample with a single draw.
    """
    if len(eps_draws) != t:
        raise DataError(f"need exactly {t} noise draws, got {len(eps_draws)}")
    z = z0
    for s in range(1, t + 1):
        a = float(sched.alpha[s - 1])
        z = math.sqrt(a) * z + math.sqrt(1.0 - a) * eps_draws[s - 1]
    return z


def ddim_step_indices(t_steps: int, num_steps: int) -> list[int]:
    """Evenly spaced ascending step subset tau_1 < ... < tau_S = t_steps."""
    if not 1 <= num_steps <= t_steps:
        raise ConfigError(f"num_steps {num_steps} must lie in 1..{t_steps}")
    taus = np.unique(np.round(np.linspace(t_steps / num_steps, t_steps, num_steps)).astype(int))
    return [int(t) for t in taus]


def ddim_update(z_t, eps_hat, t: int, t_prev: int, sched: DiffusionSchedule):
    """One deterministic (eta = 0) DDIM update from step t to step t_prev."""
    abar_t = sched.a_bar(t)
    abar_prev = sched.a_bar(t_prev)
    x0_hat = (z_t - math.sqrt(1.0 - abar_t) * eps_hat) / math.sqrt(abar_t)
    return math.sqrt(abar_prev) * x0_hat + math.sqrt(1.0 - abar_prev) * eps_hat, x0_hat


def to_torch(sched: DiffusionSchedule, dtype=torch.float32) -> dict[str, torch.Tensor]:
    return {
        "alpha": torch.as_tensor(sched.alpha, dtype=dtype),
        "alpha_bar": torch.as_tensor(sched.alpha_bar, dtype=dtype),
    }
