"""Conditioned video denoiser: UNet + ReferenceNet + pose guiders + temporal
attention.

Conditioning is injected so that a freshly initialized model is exactly the
bare UNet: the pose-guider projection is a zero conv (output is exactly 0),
and the fusion and temporal blocks end in zero-initialized output
projections, making them exact residual identities at initialization.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, ShapeError
from .autoencoder import ToyAutoencoder


def timestep_embedding(steps: torch.Tensor, dim: int, max_period: float = 10000.0):
    """Sinusoidal embeddings for integer diffusion steps; (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=steps.dtype, device=steps.device) / half
    )
    args = steps[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class _Attention(nn.Module):
    """Pre-LN multi-head self-attention with a zero-initialized output
    projection; returns the attention term only (caller adds the residual)."""

    def __init__(self, width: int, heads: int = 4):
        super().__init__()
        if width % heads:
            raise ConfigError(f"attention width {width} not divisible by {heads} heads")
        self.heads = heads
        self.norm = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, pos: torch.Tensor | None = None) -> torch.Tensor:
        b, length, width = x.shape
        h = self.norm(x)
        if pos is not None:
            h = h + pos
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        head_dim = width // self.heads

        def split(t):
            return t.view(b, length, self.heads, head_dim).transpose(1, 2)

        attn = torch.softmax(
            split(q) @ split(k).transpose(-1, -2) / math.sqrt(head_dim), dim=-1
        )
        out = (attn @ split(v)).transpose(1, 2).reshape(b, length, width)
        return self.out(out)


class ReferenceFusion(nn.Module):
    """Fuse one ReferenceNet feature map into per-frame denoiser features.

    The reference map is replicated across the t axis, channel-concatenated
    (giving 2c channels), run through per-frame spatial self-attention with a
    residual, and the first c channels of the result are returned.
    """

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.channels = channels
        self.attn = _Attention(2 * channels, heads)

    def forward(self, feat: torch.Tensor, ref_feat: torch.Tensor) -> torch.Tensor:
        if feat.ndim != 5:
            raise ShapeError(f"denoiser features must be (b,t,c,h,w), got {tuple(feat.shape)}")
        b, t, c, h, w = feat.shape
        if ref_feat.shape != (b, c, h, w):
            raise ShapeError(
                f"reference feature shape {tuple(ref_feat.shape)} does not match {(b, c, h, w)}"
            )
        ref_rep = ref_feat[:, None].expand(b, t, c, h, w)
        x = torch.cat([feat, ref_rep], dim=2)  # (b, t, 2c, h, w)
        tokens = x.permute(0, 1, 3, 4, 2).reshape(b * t, h * w, 2 * c)
        tokens = tokens + self.attn(tokens)
        fused = tokens[..., :c].reshape(b, t, h, w, c).permute(0, 1, 4, 2, 3)
        return fused.contiguous()


class TemporalAttention(nn.Module):
    """Self-attention over the frame axis, applied per spatial location.

    (b,t,c,h,w) is reshaped to (b*h*w, t, c); sinusoidal frame-position
    encodings feed the attention input; the attended output is residual-added
    and reshaped back.
    """

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.channels = channels
        self.attn = _Attention(channels, heads)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        if feat.ndim != 5:
            raise ShapeError(f"temporal attention needs (b,t,c,h,w), got {tuple(feat.shape)}")
        b, t, c, h, w = feat.shape
        tokens = feat.permute(0, 3, 4, 1, 2).reshape(b * h * w, t, c)
        pos = timestep_embedding(torch.arange(t, dtype=feat.dtype, device=feat.device), c)
        tokens = tokens + self.attn(tokens, pos=pos[None])
        return tokens.reshape(b, h, w, t, c).permute(0, 3, 4, 1, 2).contiguous()


class PoseGuider(nn.Module):
    """Keypoint raster -> additive residual on the noisy latent.

    Four 4x4 convolutions with 16/32/64/128 channels; enough of them run at
    stride 2 for the ladder to land exactly on the latent resolution (the
    raster is pre-resized when its size is not latent * 2^k, k <= 4). The
    final projection is a zero conv, so a fresh guider contributes exactly 0.
    """

    CHANNELS = (16, 32, 64, 128)

    def __init__(self, latent_channels: int, raster_resolution: int, latent_resolution: int):
        super().__init__()
        if latent_resolution < 1 or raster_resolution < latent_resolution:
            raise ConfigError(
                f"conv ladder cannot reach latent {latent_resolution} "
                f"from raster {raster_resolution}"
            )
        self.raster_resolution = raster_resolution
        self.latent_resolution = latent_resolution
        ratio = raster_resolution / latent_resolution
        k = int(round(math.log2(ratio)))
        if 2**k != ratio or k > 4:
            k = min(4, max(0, int(math.floor(math.log2(ratio)))))
            self.resized_input = latent_resolution * 2**k
        else:
            self.resized_input = raster_resolution
        strides = [2] * k + [1] * (4 - k)

        layers = []
        in_ch = 1
        self._strides = strides
        for ch, stride in zip(self.CHANNELS, strides):
            # stride-1 layers pad asymmetrically (1 left/top, 2 right/bottom)
            # so the even 4x4 kernel preserves resolution exactly.
            layers.append(nn.Conv2d(in_ch, ch, kernel_size=4, stride=stride, padding=0))
            in_ch = ch
        self.convs = nn.ModuleList(layers)
        self.proj = nn.Conv2d(self.CHANNELS[-1], latent_channels, kernel_size=1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, raster: torch.Tensor) -> torch.Tensor:
        if raster.ndim != 4 or raster.shape[1] != 1:
            raise ShapeError(f"raster batch must be (B, 1, H, W), got {tuple(raster.shape)}")
        if raster.shape[2] != self.raster_resolution or raster.shape[3] != self.raster_resolution:
            raise ShapeError(
                f"raster resolution {tuple(raster.shape[2:])} != configured "
                f"{self.raster_resolution}"
            )
        h = raster
        if self.resized_input != raster.shape[2]:
            h = F.interpolate(h, size=(self.resized_input, self.resized_input), mode="bilinear")
        for conv, stride in zip(self.convs, self._strides):
            h = F.pad(h, (1, 2, 1, 2) if stride == 1 else (1, 1, 1, 1))
            h = F.silu(conv(h))
        return self.proj(h)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int | None, groups: int = 8):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch) if time_dim else None
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        if self.time_proj is not None and t_emb is not None:
            h = h + self.time_proj(F.silu(t_emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ReferenceNet(nn.Module):
    """Mirror of the denoiser's down path; emits one map per fusion level."""

    def __init__(self, latent_channels: int, base_channels: int):
        super().__init__()
        c0, c1 = base_channels, 2 * base_channels
        self.conv_in = nn.Conv2d(latent_channels, c0, 3, padding=1)
        self.res0 = ResBlock(c0, c0, None)
        self.down0 = nn.Conv2d(c0, c0, 3, stride=2, padding=1)
        self.res1 = ResBlock(c0, c1, None)
        self.down1 = nn.Conv2d(c1, c1, 3, stride=2, padding=1)
        self.res_mid = ResBlock(c1, c1, None)

    def forward(self, ref_latent: torch.Tensor) -> list[torch.Tensor]:
        x = self.conv_in(ref_latent)
        f0 = self.res0(x)
        f1 = self.res1(self.down0(f0))
        f2 = self.res_mid(self.down1(f1))
        return [f0, f1, f2]


class UNetDenoiser(nn.Module):
    """Three-level UNet with a fusion and a temporal site per level."""

    def __init__(self, latent_channels: int, base_channels: int, time_dim: int = 128):
        super().__init__()
        if base_channels % 8:
            raise ConfigError(f"base_channels must be a multiple of 8, got {base_channels}")
        c0, c1 = base_channels, 2 * base_channels
        self.level_channels = (c0, c1, c1)
        self.time_dim = time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.conv_in = nn.Conv2d(latent_channels, c0, 3, padding=1)
        self.res_down0 = ResBlock(c0, c0, time_dim)
        self.down0 = nn.Conv2d(c0, c0, 3, stride=2, padding=1)
        self.res_down1 = ResBlock(c0, c1, time_dim)
        self.down1 = nn.Conv2d(c1, c1, 3, stride=2, padding=1)
        self.res_mid = ResBlock(c1, c1, time_dim)
        self.fusion = nn.ModuleList(ReferenceFusion(c) for c in self.level_channels)
        self.temporal = nn.ModuleList(TemporalAttention(c) for c in self.level_channels)
        self.up1 = nn.Conv2d(c1, c1, 3, padding=1)
        self.res_up1 = ResBlock(c1 + c1, c1, time_dim)
        self.up0 = nn.Conv2d(c1, c1, 3, padding=1)
        self.res_up0 = ResBlock(c1 + c0, c0, time_dim)
        self.norm_out = nn.GroupNorm(8, c0)
        self.conv_out = nn.Conv2d(c0, latent_channels, 3, padding=1)

    def _site(self, i, x, batch, frames, ref_feats, use_temporal):
        spatial = x.shape[1:]
        x5 = x.view(batch, frames, *spatial)
        if ref_feats is not None:
            x5 = self.fusion[i](x5, ref_feats[i])
        if use_temporal:
            x5 = self.temporal[i](x5)
        return x5.reshape(batch * frames, *spatial)

    def forward(
        self,
        z: torch.Tensor,
        steps: torch.Tensor,
        ref_feats: list[torch.Tensor] | None = None,
        use_temporal: bool = False,
    ) -> torch.Tensor:
        if z.ndim != 5:
            raise ShapeError(f"denoiser input must be (b,t,c,h,w), got {tuple(z.shape)}")
        b, t = z.shape[:2]
        if ref_feats is not None and len(ref_feats) != len(self.level_channels):
            raise ShapeError(
                f"need {len(self.level_channels)} reference maps, got {len(ref_feats)}"
            )
        t_emb = self.time_mlp(timestep_embedding(steps.to(z.dtype), self.time_dim))
        t_emb = t_emb.repeat_interleave(t, dim=0)

        x = self.conv_in(z.reshape(b * t, *z.shape[2:]))
        x = self.res_down0(x, t_emb)
        x = self._site(0, x, b, t, ref_feats, use_temporal)
        skip0 = x
        x = self.res_down1(self.down0(x), t_emb)
        x = self._site(1, x, b, t, ref_feats, use_temporal)
        skip1 = x
        x = self.res_mid(self.down1(x), t_emb)
        x = self._site(2, x, b, t, ref_feats, use_temporal)

        x = self.up1(F.interpolate(x, scale_factor=2, mode="nearest"))
        x = self.res_up1(torch.cat([x, skip1], dim=1), t_emb)
        x = self.up0(F.interpolate(x, scale_factor=2, mode="nearest"))
        x = self.res_up0(torch.cat([x, skip0], dim=1), t_emb)
        out = self.conv_out(F.silu(self.norm_out(x)))
        return out.view(b, t, *out.shape[1:])

    def temporal_parameters(self):
        return self.temporal.parameters()


class MotionToVideoModel(nn.Module):
    """Full video-synthesis bundle: frozen autoencoder + conditioned denoiser."""

    def __init__(
        self,
        autoencoder: ToyAutoencoder,
        image_size: int,
        base_channels: int = 32,
        latent_scale: float = 1.0,
    ):
        super().__init__()
        f = autoencoder.downsample_factor
        if image_size % f:
            raise ConfigError(f"image size {image_size} not divisible by f={f}")
        self.image_size = image_size
        self.latent_resolution = image_size // f
        self.autoencoder = autoencoder
        c_z = autoencoder.latent_channels
        self.unet = UNetDenoiser(c_z, base_channels)
        self.refnet = ReferenceNet(c_z, base_channels)
        self.guider_mouth = PoseGuider(c_z, image_size, self.latent_resolution)
        self.guider_face = PoseGuider(c_z, image_size, self.latent_resolution)
        self.register_buffer("latent_scale", torch.tensor(float(latent_scale)))

    def config(self) -> dict:
        return {
            "image_size": self.image_size,
            "base_channels": self.unet.level_channels[0],
            "autoencoder": self.autoencoder.config(),
        }

    def encode_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """(..., H, W) grayscale in [0,1] -> scaled latents (..., c_z, h, w)."""
        lead = frames.shape[:-2]
        flat = frames.reshape(-1, 1, *frames.shape[-2:])
        z = self.autoencoder.encode(flat) / self.latent_scale
        return z.view(*lead, *z.shape[1:])

    def decode_latents(self, latents: torch.Tensor) -> torch.Tensor:
        """(..., c_z, h, w) -> grayscale (..., H, W), inverse of encode_frames."""
        lead = latents.shape[:-3]
        flat = latents.reshape(-1, *latents.shape[-3:])
        img = self.autoencoder.decode(flat * self.latent_scale).squeeze(1)
        return img.view(*lead, *img.shape[-2:])

    def reference_features(self, ref_latent: torch.Tensor) -> list[torch.Tensor]:
        if ref_latent.ndim != 4:
            raise ShapeError(f"reference latent must be (B,c,h,w), got {tuple(ref_latent.shape)}")
        if ref_latent.shape[-1] != self.latent_resolution:
            raise ShapeError(
                f"reference latent resolution {ref_latent.shape[-1]} != "
                f"{self.latent_resolution}"
            )
        return self.refnet(ref_latent)

    def pose_residual(self, mouth_raster: torch.Tensor, face_raster: torch.Tensor):
        """Sum of the two guider residuals; each is independently additive."""
        return self.guider_mouth(mouth_raster) + self.guider_face(face_raster)

    def denoise_eps(
        self,
        z_t: torch.Tensor,
        steps: torch.Tensor,
        ref_feats: list[torch.Tensor] | None = None,
        pose_residuals: torch.Tensor | None = None,
        motion_context: torch.Tensor | None = None,
        context_pose_residuals: torch.Tensor | None = None,
        use_temporal: bool = False,
    ) -> torch.Tensor:
        """Predict the injected noise for the target frames of z_t.

        Pose residuals are added to the noisy latents at entry; motion
        context frames (noisy latents of previously generated frames) are
        concatenated along the temporal axis and their predictions dropped.
        """
        if z_t.ndim != 5:
            raise ShapeError(f"z_t must be (b,t,c,h,w), got {tuple(z_t.shape)}")
        x = z_t
        if pose_residuals is not None:
            if pose_residuals.shape != z_t.shape:
                raise ShapeError(
                    f"pose residual shape {tuple(pose_residuals.shape)} != z_t "
                    f"{tuple(z_t.shape)}"
                )
            x = x + pose_residuals
        n_ctx = 0
        if motion_context is not None:
            ctx = motion_context
            if ctx.shape[0] != z_t.shape[0] or ctx.shape[2:] != z_t.shape[2:]:
                raise ShapeError("motion context must match z_t in batch and spatial dims")
            if context_pose_residuals is not None:
                ctx = ctx + context_pose_residuals
            n_ctx = ctx.shape[1]
            x = torch.cat([ctx, x], dim=1)
        eps_all = self.unet(x, steps, ref_feats=ref_feats, use_temporal=use_temporal)
        return eps_all[:, n_ctx:]

    def temporal_parameters(self):
        return self.unet.temporal_parameters()

    def non_temporal_state(self) -> dict[str, torch.Tensor]:
        return {
            k: v for k, v in self.state_dict().items() if not k.startswith("unet.temporal.")
        }


def build_m2v_model(config: dict, seed: int = 0, latent_scale: float = 1.0) -> MotionToVideoModel:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        auto = ToyAutoencoder(**config["autoencoder"])
        return MotionToVideoModel(
            auto,
            image_size=config["image_size"],
            base_channels=config["base_channels"],
            latent_scale=latent_scale,
        )
