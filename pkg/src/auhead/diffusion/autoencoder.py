"""Toy latent autoencoder for the video stage.

A small two-level conv autoencoder (downsample factor 4) trained with plain
reconstruction loss, then frozen; the diffusion model runs in its latent
space. Latents are divided by a recorded scale (std over training latents)
so the denoiser sees roughly unit-variance inputs.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ShapeError


class ToyAutoencoder(nn.Module):
    def __init__(self, latent_channels: int = 4, base_channels: int = 16):
        super().__init__()
        self.latent_channels = latent_channels
        self.downsample_factor = 4
        ch = base_channels
        self.enc = nn.Sequential(
            nn.Conv2d(1, ch, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(ch, 2 * ch, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * ch, latent_channels, 3, padding=1),
        )
        self.dec = nn.Sequential(
            nn.Conv2d(latent_channels, 2 * ch, 3, padding=1),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * ch, ch, 3, padding=1),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(ch, 1, 3, padding=1),
        )

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) -> (B, c_z, H/4, W/4)."""
        if images.ndim != 4 or images.shape[1] != 1:
            raise ShapeError(f"expected (B, 1, H, W) grayscale batch, got {tuple(images.shape)}")
        if images.shape[2] % self.downsample_factor or images.shape[3] % self.downsample_factor:
            raise ShapeError(
                f"image size {tuple(images.shape[2:])} not divisible by f={self.downsample_factor}"
            )
        return self.enc(images)

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        if latents.ndim != 4 or latents.shape[1] != self.latent_channels:
            raise ShapeError(f"expected (B, {self.latent_channels}, h, w) latents")
        return self.dec(latents)

    def config(self) -> dict:
        return {
            "latent_channels": self.latent_channels,
            "base_channels": self.enc[0].out_channels,
        }


def build_autoencoder(config: dict, seed: int = 0) -> ToyAutoencoder:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return ToyAutoencoder(**config)


def train_autoencoder(
    frames: torch.Tensor,
    config: dict,
    seed: int = 0,
) -> tuple[ToyAutoencoder, list[dict], float]:
    """Reconstruction-only pretraining on a (N, H, W) frame bank.

    Returns (model, loss rows, latent scale). The latent scale is the std of
    training latents and is stored alongside the weights.
    """
    model = build_autoencoder(
        {"latent_channels": config["latent_channels"], "base_channels": config["base_channels"]},
        seed=seed,
    )
    opt = torch.optim.Adam(model.parameters(), lr=config["lr"])
    g = torch.Generator().manual_seed(seed)
    images = frames[:, None, :, :]

    rows = []
    for step in range(config["steps"]):
        idx = torch.randint(images.shape[0], (config["batch"],), generator=g)
        batch = images[idx]
        recon = model.decode(model.encode(batch))
        loss = ((recon - batch) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        rows.append({"step": step + 1, "loss": float(loss.detach())})

    with torch.no_grad():
        sample = images[: min(images.shape[0], 256)]
        latent_scale = float(model.encode(sample).std())
    return model, rows, max(latent_scale, 1e-6)
