"""Conditional normalizing-flow latent prior.

Four affine residual coupling layers over the latent channels; each layer
keeps one half of the channels, and shifts/scales the other half with a
small temporal conv net run on [kept_half ; conditioning]. The final conv of
every conditioner is zero-initialized, so a fresh flow is exactly the
identity and the prior starts as a standard normal.

Direction convention: ``forward`` normalizes (latent -> base), ``inverse``
samples (base -> latent). The per-frame log-det is exact because the scale
acts diagonally on the transformed half.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from ..errors import ConfigError, ShapeError

LOG_SCALE_CLAMP = 3.0


class _Conditioner(nn.Module):
    """Two temporal convs mapping [kept_half ; cond] to (shift, log_scale)."""

    def __init__(self, half_width: int, cond_width: int, hidden: int):
        super().__init__()
        self.conv1 = nn.Conv1d(half_width + cond_width, hidden, kernel_size=3, padding=1)
        self.conv2 = nn.Conv1d(hidden, 2 * half_width, kernel_size=3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, kept: torch.Tensor, cond: torch.Tensor):
        # kept, cond: (B, T, C) -> conv over time
        x = torch.cat([kept, cond], dim=-1).transpose(1, 2)
        x = self.conv2(torch.nn.functional.silu(self.conv1(x))).transpose(1, 2)
        shift, raw_scale = x.chunk(2, dim=-1)
        log_scale = LOG_SCALE_CLAMP * torch.tanh(raw_scale / LOG_SCALE_CLAMP)
        return shift, log_scale


class ResidualCoupling(nn.Module):
    def __init__(self, latent_width: int, cond_width: int, hidden: int, flip: bool):
        super().__init__()
        self.half = latent_width // 2
        self.flip = flip
        self.net = _Conditioner(self.half, cond_width, hidden)

    def _split(self, z):
        if self.flip:
            return z[..., self.half :], z[..., : self.half]
        return z[..., : self.half], z[..., self.half :]

    def _join(self, kept, moved):
        if self.flip:
            return torch.cat([moved, kept], dim=-1)
        return torch.cat([kept, moved], dim=-1)

    def forward(self, z, cond):
        kept, moved = self._split(z)
        shift, log_scale = self.net(kept, cond)
        out = (moved - shift) * torch.exp(-log_scale)
        return self._join(kept, out), -log_scale.sum(dim=-1)

    def inverse(self, z_base, cond):
        kept, moved = self._split(z_base)
        shift, log_scale = self.net(kept, cond)
        return self._join(kept, moved * torch.exp(log_scale) + shift)


class FlowPrior(nn.Module):
    """Stack of alternating-half couplings over a standard-normal base."""

    def __init__(self, latent_width: int, cond_width: int, hidden: int = 32, num_layers: int = 4):
        super().__init__()
        if latent_width % 2:
            raise ConfigError(f"flow latent width must be even, got {latent_width}")
        self.latent_width = latent_width
        self.cond_width = cond_width
        self.layers = nn.ModuleList(
            ResidualCoupling(latent_width, cond_width, hidden, flip=bool(i % 2))
            for i in range(num_layers)
        )

    def _check(self, z, cond):
        if z.shape[-1] != self.latent_width:
            raise ShapeError(f"latent width {z.shape[-1]} != flow width {self.latent_width}")
        if cond.shape[-1] != self.cond_width:
            raise ShapeError(f"cond width {cond.shape[-1]} != flow cond width {self.cond_width}")
        if z.shape[:-1] != cond.shape[:-1]:
            raise ShapeError(f"latent/cond frame shapes differ: {z.shape} vs {cond.shape}")

    def forward(self, z: torch.Tensor, cond: torch.Tensor):
        """Normalize (B, T, Z) latents; returns (z_base, per-frame log_det)."""
        self._check(z, cond)
        log_det = torch.zeros(z.shape[:-1], dtype=z.dtype, device=z.device)
        for layer in self.layers:
            z, ld = layer(z, cond)
            log_det = log_det + ld
        return z, log_det

    def inverse(self, z_base: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        self._check(z_base, cond)
        for layer in reversed(self.layers):
            z_base = layer.inverse(z_base, cond)
        return z_base

    def log_density(self, z: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """Per-frame log p(z_t | c_t): base normal density plus the log-det."""
        z_base, log_det = self.forward(z, cond)
        base = -0.5 * (z_base**2).sum(dim=-1) - 0.5 * self.latent_width * math.log(2 * math.pi)
        return base + log_det
