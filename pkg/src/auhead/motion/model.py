"""Variational motion generator: dilated-conv VAE over landmark sequences.

Encoder and decoder are stacks of 1D dilated convolutions over time with
residual connections and "same" padding, giving per-frame outputs with a
receptive field of several hundred frames. The latent prior is the
conditional normalizing flow from flow.py.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from ..errors import DataError, ShapeError
from ..facs import NUM_AUS, NUM_LANDMARKS, LandmarkSequence
from ..ingest.audio import ConditioningSequence
from .flow import FlowPrior
from ..torchutils import to_tensor

LANDMARK_WIDTH = NUM_LANDMARKS * 2  # 324 flattened coords per frame


@dataclass(frozen=True)
class PosteriorParams:
    """Per-frame diagonal Gaussian: std = exp(log_sigma)."""

    mu: np.ndarray  # (T, Z)
    log_sigma: np.ndarray  # (T, Z)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        ls = np.asarray(self.log_sigma, dtype=np.float64)
        if mu.shape != ls.shape or mu.ndim != 2:
            raise ShapeError(f"mu/log_sigma must share a (T, Z) shape: {mu.shape} vs {ls.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(ls))):
            raise DataError("posterior parameters must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_sigma", ls)

    @property
    def latent_width(self) -> int:
        return self.mu.shape[1]


class DilatedConvStack(nn.Module):
    """Input projection plus pre-norm residual dilated conv layers.

    Two choices here are load-bearing for short-crop training:
    - Padding is replicate, not zero: with the receptive field far wider
      than a training window, zero padding makes activations depend on where
      a frame sits relative to the clip edge, and models trained on short
      crops then fail on longer sequences.
    - Normalization is per-frame over channels only (never over time), so
      feature statistics are also length-independent.
    Residual convs are zero-initialized: the stack starts as the identity on
    top of the input projection and adds temporal context gradually.
    """

    def __init__(self, in_width, hidden, num_layers=8, kernel_size=3, max_dilation=128):
        super().__init__()
        self.proj = nn.Conv1d(in_width, hidden, kernel_size=1)
        self.norms = nn.ModuleList()
        self.blocks = nn.ModuleList()
        dilation = 1
        for _ in range(num_layers):
            padding = dilation * (kernel_size - 1) // 2
            conv = nn.Conv1d(
                hidden,
                hidden,
                kernel_size,
                padding=padding,
                dilation=dilation,
                padding_mode="replicate",
            )
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)
            self.norms.append(nn.LayerNorm(hidden))
            self.blocks.append(conv)
            dilation = min(dilation * 2, max_dilation)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, in_width) -> (B, T, hidden)
        h = self.proj(x.transpose(1, 2)).transpose(1, 2)
        for norm, block in zip(self.norms, self.blocks):
            y = torch.nn.functional.silu(norm(h)).transpose(1, 2)
            h = h + block(y).transpose(1, 2)
        return h


class MotionEncoder(nn.Module):
    def __init__(self, cond_width, latent_width, hidden, **stack_kw):
        super().__init__()
        self.stack = DilatedConvStack(LANDMARK_WIDTH + cond_width, hidden, **stack_kw)
        self.head_mu = nn.Conv1d(hidden, latent_width, kernel_size=1)
        self.head_log_sigma = nn.Conv1d(hidden, latent_width, kernel_size=1)

    def forward(self, landmarks_flat, cond):
        h = self.stack(torch.cat([landmarks_flat, cond], dim=-1)).transpose(1, 2)
        return self.head_mu(h).transpose(1, 2), self.head_log_sigma(h).transpose(1, 2)


class MotionDecoder(nn.Module):
    def __init__(self, cond_width, latent_width, hidden, **stack_kw):
        super().__init__()
        self.stack = DilatedConvStack(latent_width + cond_width, hidden, **stack_kw)
        self.head = nn.Conv1d(hidden, LANDMARK_WIDTH, kernel_size=1)

    def forward(self, z, cond):
        h = self.stack(torch.cat([z, cond], dim=-1)).transpose(1, 2)
        return self.head(h).transpose(1, 2)


class VMGModel(nn.Module):
    """Encoder + decoder + flow prior bundle.

    Landmark targets and conditioning channels are standardized with dataset
    statistics stored as buffers (set once by the trainer, identity by
    default); encode/decode and the prior all see the standardized values,
    and decode maps back to raw coordinates.
    """

    def __init__(
        self,
        audio_width: int,
        latent_width: int = 16,
        hidden: int = 64,
        flow_hidden: int = 32,
        num_layers: int = 8,
        kernel_size: int = 3,
        max_dilation: int = 128,
        flow_layers: int = 4,
    ):
        super().__init__()
        self.audio_width = audio_width
        self.cond_width = audio_width + NUM_AUS
        self.latent_width = latent_width
        stack_kw = dict(num_layers=num_layers, kernel_size=kernel_size, max_dilation=max_dilation)
        self.encoder = MotionEncoder(self.cond_width, latent_width, hidden, **stack_kw)
        self.decoder = MotionDecoder(self.cond_width, latent_width, hidden, **stack_kw)
        self.prior = FlowPrior(latent_width, self.cond_width, flow_hidden, flow_layers)
        self.register_buffer("target_mean", torch.zeros(LANDMARK_WIDTH))
        self.register_buffer("target_scale", torch.ones(LANDMARK_WIDTH))
        self.register_buffer("cond_mean", torch.zeros(self.cond_width))
        self.register_buffer("cond_scale", torch.ones(self.cond_width))

    def set_normalization(self, target_mean, target_scale, cond_mean, cond_scale) -> None:
        dtype = self.target_mean.dtype
        self.target_mean.copy_(torch.as_tensor(target_mean, dtype=dtype))
        self.target_scale.copy_(torch.as_tensor(target_scale, dtype=dtype).clamp(min=1e-3))
        self.cond_mean.copy_(torch.as_tensor(cond_mean, dtype=dtype))
        self.cond_scale.copy_(torch.as_tensor(cond_scale, dtype=dtype).clamp(min=1e-3))

    def normalize_cond(self, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-1] != self.cond_width:
            raise ShapeError(f"conditioning width {cond.shape[-1]} != model {self.cond_width}")
        return (cond - self.cond_mean) / self.cond_scale

    def encode_t(self, landmarks_flat: torch.Tensor, cond: torch.Tensor):
        """(B, T, 324) x (B, T, D+18) raw inputs -> per-frame (mu, log_sigma)."""
        if landmarks_flat.shape[-1] != LANDMARK_WIDTH:
            raise ShapeError(f"flattened landmarks must be {LANDMARK_WIDTH}-wide")
        if landmarks_flat.shape[:2] != cond.shape[:2]:
            raise ShapeError("landmark/conditioning frame counts differ")
        x = (landmarks_flat - self.target_mean) / self.target_scale
        return self.encoder(x, self.normalize_cond(cond))

    def decode_t(self, z: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """Latents + raw conditioning -> raw flattened landmarks."""
        if z.shape[-1] != self.latent_width:
            raise ShapeError(f"latent width {z.shape[-1]} != model {self.latent_width}")
        if z.shape[:2] != cond.shape[:2]:
            raise ShapeError("latent/conditioning frame counts differ")
        out = self.decoder(z, self.normalize_cond(cond))
        return out * self.target_scale + self.target_mean

    def config(self) -> dict:
        first = self.encoder.stack.blocks[0]
        return {
            "audio_width": self.audio_width,
            "latent_width": self.latent_width,
            "hidden": self.encoder.stack.proj.out_channels,
            "flow_hidden": self.prior.layers[0].net.conv1.out_channels,
            "num_layers": len(self.encoder.stack.blocks),
            "kernel_size": first.kernel_size[0],
            "max_dilation": max(b.dilation[0] for b in self.encoder.stack.blocks),
            "flow_layers": len(self.prior.layers),
        }


def build_vmg_model(config: dict, seed: int = 0) -> VMGModel:
    """Construct a VMGModel with deterministic initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return VMGModel(**config)


def _model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def encode(model: VMGModel, seq: LandmarkSequence, cond: ConditioningSequence) -> PosteriorParams:
    """Posterior parameters for one sequence."""
    if len(seq) != len(cond):
        raise ShapeError(f"frame counts differ: landmarks {len(seq)} vs conditioning {len(cond)}")
    dtype = _model_dtype(model)
    flat = torch.as_tensor(seq.points.reshape(len(seq), LANDMARK_WIDTH), dtype=dtype)[None]
    c = to_tensor(cond.frames, dtype)[None]
    with torch.no_grad():
        mu, log_sigma = model.encode_t(flat, c)
    return PosteriorParams(mu[0].double().numpy(), log_sigma[0].double().numpy())


def reparameterize(p: PosteriorParams, noise: np.ndarray) -> np.ndarray:
    """z = mu + exp(log_sigma) * noise, elementwise."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != p.mu.shape:
        raise ShapeError(f"noise shape {noise.shape} != posterior shape {p.mu.shape}")
    return p.mu + np.exp(p.log_sigma) * noise


def decode(model: VMGModel, z: np.ndarray, cond: ConditioningSequence) -> LandmarkSequence:
    """Decode one latent sequence into landmarks."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"latent must be (T, Z), got shape {z.shape}")
    if z.shape[0] != len(cond):
        raise ShapeError(f"frame counts differ: latent {z.shape[0]} vs conditioning {len(cond)}")
    dtype = _model_dtype(model)
    zt = to_tensor(z, dtype)[None]
    c = to_tensor(cond.frames, dtype)[None]
    with torch.no_grad():
        flat = model.decode_t(zt, c)
    pts = flat[0].double().numpy().reshape(z.shape[0], NUM_LANDMARKS, 2)
    return LandmarkSequence(pts, cond.fps)


def flow_forward(prior: FlowPrior, z: np.ndarray, cond: np.ndarray):
    """Normalize (T, Z) -> ((T, Z) base variables, (T,) log-det)."""
    dtype = _model_dtype(prior)
    zt = to_tensor(np.asarray(z, np.float64), dtype=dtype)[None]
    ct = to_tensor(np.asarray(cond, np.float64), dtype=dtype)[None]
    with torch.no_grad():
        z_base, log_det = prior.forward(zt, ct)
    return z_base[0].double().numpy(), log_det[0].double().numpy()


def flow_inverse(prior: FlowPrior, z_base: np.ndarray, cond: np.ndarray) -> np.ndarray:
    dtype = _model_dtype(prior)
    zt = to_tensor(np.asarray(z_base, np.float64), dtype=dtype)[None]
    ct = to_tensor(np.asarray(cond, np.float64), dtype=dtype)[None]
    with torch.no_grad():
        z = prior.inverse(zt, ct)
    return z[0].double().numpy()


def flow_log_density(prior: FlowPrior, z: np.ndarray, cond: np.ndarray) -> np.ndarray:
    """Per-frame log p(z_t | c_t) under the flow prior."""
    dtype = _model_dtype(prior)
    zt = to_tensor(np.asarray(z, np.float64), dtype=dtype)[None]
    ct = to_tensor(np.asarray(cond, np.float64), dtype=dtype)[None]
    with torch.no_grad():
        return prior.log_density(zt, ct)[0].double().numpy()
