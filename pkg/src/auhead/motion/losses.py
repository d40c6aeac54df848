"""The four-term training objective of the motion generator.

Reduction conventions (pinned by tests):
- mse: mean over frames, points and coordinates.
- continuity: mean squared one-step frame difference over (T-1) x 324 slots;
  exactly 0 for a temporally constant prediction, 0 for T = 1.
- kl: single-sample Monte-Carlo estimate (log q - log p) in nats per frame
  (summed over latent dims, averaged over frames), so its scale is
  clip-length invariant and matches the per-frame Gaussian KL closed form.
- sync: mean of (1 - cosine) over all stride-1 W-frame windows, in [0, 2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import DataError, ShapeError, TrainingFault
from ..facs import LandmarkSequence
from ..ingest.audio import AudioFeatureSequence, ConditioningSequence
from .flow import FlowPrior
from .model import LANDMARK_WIDTH, PosteriorParams, VMGModel
from .sync import SyncExpert, cosine_similarity, sliding_windows, sync_scores
from ..torchutils import to_tensor


@dataclass(frozen=True)
class LossWeights:
    mse: float = 5.0
    kl: float = 0.5
    cont: float = 3.0
    sync: float = 0.01

    def __post_init__(self):
        for name in ("mse", "kl", "cont", "sync"):
            if getattr(self, name) < 0:
                raise DataError(f"loss weight {name} must be nonnegative")


def mse_loss(target: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    if target.shape != pred.shape:
        raise ShapeError(f"mse shapes differ: {tuple(target.shape)} vs {tuple(pred.shape)}")
    return ((target - pred) ** 2).mean()


def continuity_loss(pred: torch.Tensor) -> torch.Tensor:
    """Mean squared temporal difference of a (..., T, C) prediction."""
    if pred.shape[-2] < 2:
        return pred.sum() * 0.0
    diff = pred[..., 1:, :] - pred[..., :-1, :]
    return (diff**2).mean()


def gaussian_log_density(
    z: torch.Tensor, mu: torch.Tensor, log_sigma: torch.Tensor
) -> torch.Tensor:
    """Per-frame log N(z; mu, diag(exp(log_sigma))^2), summed over Z."""
    quad = ((z - mu) * torch.exp(-log_sigma)) ** 2
    per_dim = -0.5 * quad - log_sigma - 0.5 * math.log(2 * math.pi)
    return per_dim.sum(dim=-1)


def kl_loss_mc(
    z: torch.Tensor,
    mu: torch.Tensor,
    log_sigma: torch.Tensor,
    prior: FlowPrior,
    cond: torch.Tensor,
) -> torch.Tensor:
    """Single-sample KL(q || p) estimate in nats per frame."""
    log_q = gaussian_log_density(z, mu, log_sigma)
    log_p = prior.log_density(z, cond)
    return (log_q - log_p).mean()


def kl_samples_mc(
    mu: np.ndarray,
    log_sigma: np.ndarray,
    prior: FlowPrior,
    cond: np.ndarray,
    noise: np.ndarray,
) -> np.ndarray:
    """n-sample variant for estimator tests: one KL estimate per noise draw.

    noise has shape (N, T, Z); returns the N per-draw estimates under the
    same nats-per-frame reduction as kl_loss_mc.
    """
    dtype = next(prior.parameters()).dtype
    mu_t = to_tensor(np.asarray(mu, np.float64), dtype=dtype)
    ls_t = to_tensor(np.asarray(log_sigma, np.float64), dtype=dtype)
    noise_t = to_tensor(np.asarray(noise, np.float64), dtype=dtype)
    cond_t = to_tensor(np.asarray(cond, np.float64), dtype=dtype)
    n = noise_t.shape[0]
    z = mu_t[None] + torch.exp(ls_t)[None] * noise_t
    with torch.no_grad():
        log_q = gaussian_log_density(z, mu_t.expand_as(z), ls_t.expand_as(z))
        log_p = prior.log_density(z, cond_t[None].expand(n, -1, -1))
    per_draw = (log_q - log_p).mean(dim=1)
    return per_draw.double().numpy()


def sync_loss(
    expert: SyncExpert, pred_flat: torch.Tensor, audio: torch.Tensor
) -> torch.Tensor:
    """Mean 1 - cos over all aligned windows; batched over leading dim."""
    if pred_flat.ndim == 2:
        pred_flat, audio = pred_flat[None], audio[None]
    losses = []
    for b in range(pred_flat.shape[0]):
        cos = cosine_similarity(
            expert.embed_landmarks(sliding_windows(pred_flat[b], expert.window)),
            expert.embed_audio(sliding_windows(audio[b], expert.window)),
        )
        losses.append((1.0 - cos).mean())
    return torch.stack(losses).mean()


def vmg_loss_terms(
    target_flat: torch.Tensor,
    pred_flat: torch.Tensor,
    mu: torch.Tensor,
    log_sigma: torch.Tensor,
    z: torch.Tensor,
    prior: FlowPrior,
    cond: torch.Tensor,
    sync_expert: SyncExpert | None,
    audio: torch.Tensor | None,
    weights: LossWeights,
) -> dict[str, torch.Tensor]:
    """Differentiable loss terms; the training loop and the public wrapper share this."""
    terms = {
        "mse": mse_loss(target_flat, pred_flat),
        "cont": continuity_loss(pred_flat),
        "kl": kl_loss_mc(z, mu, log_sigma, prior, cond),
    }
    if weights.sync > 0:
        if sync_expert is None or audio is None:
            raise ShapeError("sync weight > 0 requires a sync expert and audio features")
        terms["sync"] = sync_loss(sync_expert, pred_flat, audio)
    else:
        terms["sync"] = pred_flat.sum() * 0.0
    terms["total"] = (
        weights.mse * terms["mse"]
        + weights.kl * terms["kl"]
        + weights.cont * terms["cont"]
        + weights.sync * terms["sync"]
    )
    return terms


def check_finite_terms(terms: dict[str, torch.Tensor], checkpoint_path=None) -> None:
    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise TrainingFault(f"{name} loss is not finite", checkpoint_path)


def vmg_loss(
    target: LandmarkSequence,
    pred: LandmarkSequence,
    posterior: PosteriorParams,
    model: VMGModel,
    cond: ConditioningSequence,
    sync_expert: SyncExpert | None,
    audio: AudioFeatureSequence | None,
    weights: LossWeights,
    noise: np.ndarray,
) -> dict[str, float]:
    """Evaluate the four loss terms and their weighted total for one clip.

    ``noise`` is the standard-normal draw for the single reparameterized
    KL sample, shape (T, Z); passing it explicitly keeps this evaluation
    deterministic.
    """
    if len(target) != len(pred) or len(target) != len(cond):
        raise ShapeError("target, prediction and conditioning lengths must match")
    dtype = next(model.parameters()).dtype
    t = len(target)
    tgt = to_tensor(target.points.reshape(t, LANDMARK_WIDTH), dtype)
    prd = to_tensor(pred.points.reshape(t, LANDMARK_WIDTH), dtype)
    mu = to_tensor(posterior.mu, dtype)
    log_sigma = to_tensor(posterior.log_sigma, dtype)
    noise_t = to_tensor(np.asarray(noise, np.float64), dtype=dtype)
    if noise_t.shape != mu.shape:
        raise ShapeError(f"noise shape {tuple(noise_t.shape)} != posterior {tuple(mu.shape)}")
    z = mu + torch.exp(log_sigma) * noise_t
    c = model.normalize_cond(to_tensor(cond.frames, dtype))
    audio_t = None if audio is None else to_tensor(audio.frames, dtype)

    with torch.no_grad():
        terms = vmg_loss_terms(
            tgt[None], prd[None], mu[None], log_sigma[None], z[None], model.prior, c[None],
            sync_expert, None if audio_t is None else audio_t[None], weights,
        )
    check_finite_terms(terms)
    return {name: float(value) for name, value in terms.items()}
