"""Deterministic DDIM sampling over an evenly spaced step subset."""

from __future__ import annotations

import torch

from ..errors import ShapeError
from .schedule import DiffusionSchedule, ddim_step_indices, ddim_update

DEFAULT_DDIM_STEPS = 40


def ddim_sample(
    model,
    sched: DiffusionSchedule,
    shape: tuple,
    num_steps: int = DEFAULT_DDIM_STEPS,
    seed: int = 0,
    generator: torch.Generator | None = None,
    ref_feats=None,
    pose_residuals: torch.Tensor | None = None,
    motion_context: torch.Tensor | None = None,
    context_pose_residuals: torch.Tensor | None = None,
    use_temporal: bool = False,
    dtype=torch.float32,
) -> torch.Tensor:
    """Sample clean latents of ``shape`` = (b, t, c, h, w) with eta = 0.

    Deterministic given (seed, inputs): z_T and the per-chunk context noise
    are the only random draws and both come from one seeded generator. The
    motion context is given as clean latents and re-noised to each visited
    step with a fixed draw, matching how training noised its context frames.
    """
    if len(shape) != 5:
        raise ShapeError(f"latent shape must be (b,t,c,h,w), got {shape}")
    g = generator if generator is not None else torch.Generator().manual_seed(seed)
    z = torch.randn(shape, generator=g, dtype=dtype)
    ctx_eps = None
    if motion_context is not None:
        ctx_eps = torch.randn(motion_context.shape, generator=g, dtype=dtype)

    taus = ddim_step_indices(sched.t_steps, num_steps)
    batch = shape[0]
    with torch.no_grad():
        for i in range(len(taus) - 1, -1, -1):
            t = taus[i]
            t_prev = taus[i - 1] if i > 0 else 0
            ctx_noisy = None
            if motion_context is not None:
                abar = sched.a_bar(t)
                ctx_noisy = (abar**0.5) * motion_context + ((1.0 - abar) ** 0.5) * ctx_eps
            eps_hat = model.denoise_eps(
                z,
                torch.full((batch,), t, dtype=torch.long),
                ref_feats=ref_feats,
                pose_residuals=pose_residuals,
                motion_context=ctx_noisy,
                context_pose_residuals=context_pose_residuals,
                use_temporal=use_temporal,
            )
            z, _ = ddim_update(z, eps_hat, t, t_prev, sched)
    return z
