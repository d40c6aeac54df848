"""Two-phase training of the motion-to-video stage.

Phase 1 trains UNet + ReferenceNet + pose guiders on individual frames with
the temporal sites disabled; phase 2 introduces the temporal attention and
freezes everything else. The toy autoencoder is pretrained separately with a
plain reconstruction loss and stays frozen throughout.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from ..checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_optimizer_arrays,
    load_state_dict_arrays,
    optimizer_arrays,
    save_checkpoint,
    state_dict_arrays,
)
from ..errors import ConfigError, PreconditionError, ShapeError, TrainingFault
from ..facs import LandmarkPartition
from ..geometry import rasterize_keypoints
from ..ingest.rig import RigClip
from .autoencoder import ToyAutoencoder, build_autoencoder, train_autoencoder
from .model import MotionToVideoModel, build_m2v_model
from .schedule import DiffusionSchedule, make_schedule
from ..torchutils import to_tensor

AUTOENCODER_KIND = "m2v-autoencoder"
PHASE1_KIND = "m2v-phase1"
PHASE2_KIND = "m2v"


def _generator_state_bytes(g: torch.Generator) -> bytes:
    return g.get_state().numpy().tobytes()


def _restore_generator(g: torch.Generator, state: bytes) -> None:
    g.set_state(torch.from_numpy(np.frombuffer(state, dtype=np.uint8).copy()))


def clip_pose_rasters(
    clip: RigClip, partition: LandmarkPartition, resolution: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-frame mouth/face keypoint rasters for one clip, as (T, H, W)."""
    mouth, face = [], []
    for t in range(len(clip.landmarks)):
        frame = clip.landmarks.frame(t)
        mouth.append(rasterize_keypoints(frame, partition, "mouth", resolution).grid)
        face.append(rasterize_keypoints(frame, partition, "face", resolution).grid)
    return (
        to_tensor(np.stack(mouth), torch.float32),
        to_tensor(np.stack(face), torch.float32),
    )


def _abar_factors(sched: DiffusionSchedule, t: torch.Tensor, dtype) -> tuple:
    abar = to_tensor(sched.alpha_bar, dtype)[t - 1]
    shape = (-1, 1, 1, 1, 1)
    return abar.sqrt().view(shape), (1.0 - abar).sqrt().view(shape)


def diffusion_loss(
    model,
    batch: dict,
    sched: DiffusionSchedule,
    generator: torch.Generator | None = None,
    t: torch.Tensor | None = None,
    eps: torch.Tensor | None = None,
    context_eps: torch.Tensor | None = None,
    use_temporal: bool = False,
) -> torch.Tensor:
    """Noise-prediction MSE on one batch.

    ``batch`` carries "latents" (B,T,c,h,w) plus optional conditioning:
    "ref_latent", "mouth_rasters"/"face_rasters" (B,T,H,W), and
    "context_latents" with matching context raster keys. Per-sample step t
    and the noise draws can be passed explicitly for deterministic checks;
    otherwise they come from ``generator``.
    """
    z0 = batch["latents"]
    if z0.ndim != 5:
        raise ShapeError(f"latents must be (B,T,c,h,w), got {tuple(z0.shape)}")
    b, frames = z0.shape[:2]
    if t is None:
        t = torch.randint(1, sched.t_steps + 1, (b,), generator=generator)
    if eps is None:
        eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    sqrt_ab, sqrt_1mab = _abar_factors(sched, t, z0.dtype)
    z_t = sqrt_ab * z0 + sqrt_1mab * eps

    ref_feats = None
    if batch.get("ref_latent") is not None:
        ref_feats = model.reference_features(batch["ref_latent"])

    pose = None
    if batch.get("mouth_rasters") is not None:
        mouth = batch["mouth_rasters"].reshape(b * frames, 1, *batch["mouth_rasters"].shape[2:])
        face = batch["face_rasters"].reshape(b * frames, 1, *batch["face_rasters"].shape[2:])
        pose = model.pose_residual(mouth, face).view(b, frames, *z0.shape[2:])

    ctx_noisy = ctx_pose = None
    if batch.get("context_latents") is not None:
        ctx0 = batch["context_latents"]
        n_ctx = ctx0.shape[1]
        if context_eps is None:
            context_eps = torch.randn(ctx0.shape, generator=generator, dtype=ctx0.dtype)
        ctx_noisy = sqrt_ab * ctx0 + sqrt_1mab * context_eps
        if batch.get("context_mouth_rasters") is not None:
            cm = batch["context_mouth_rasters"].reshape(
                b * n_ctx, 1, *batch["context_mouth_rasters"].shape[2:]
            )
            cf = batch["context_face_rasters"].reshape(
                b * n_ctx, 1, *batch["context_face_rasters"].shape[2:]
            )
            ctx_pose = model.pose_residual(cm, cf).view(b, n_ctx, *z0.shape[2:])

    eps_hat = model.denoise_eps(
        z_t,
        t,
        ref_feats=ref_feats,
        pose_residuals=pose,
        motion_context=ctx_noisy,
        context_pose_residuals=ctx_pose,
        use_temporal=use_temporal,
    )
    loss = ((eps - eps_hat) ** 2).mean()
    if not torch.isfinite(loss):
        raise TrainingFault("diffusion loss is not finite")
    return loss


# ---------------------------------------------------------------------------
# Stage training
# ---------------------------------------------------------------------------


def _write_loss_log(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for row in rows:
            fh.write(f"{row['step']},{row['loss']!r}\n")


def train_autoencoder_stage(
    dataset, config: dict, out_dir=None, seed: int = 0
) -> tuple[ToyAutoencoder, float, list[dict], Path | None]:
    """Reconstruction pretraining of the latent autoencoder on all train frames."""
    clips = dataset.train_clips()
    if not clips:
        raise ConfigError("dataset has no training clips")
    frames = to_tensor(np.concatenate([c.frames for c in clips], axis=0), torch.float32)
    ae_config = {
        "latent_channels": config["latent_channels"],
        "base_channels": config["ae_base_channels"],
        "lr": config["autoencoder"]["lr"],
        "steps": config["autoencoder"]["steps"],
        "batch": config["autoencoder"]["batch"],
    }
    model, rows, latent_scale = train_autoencoder(frames, ae_config, seed=seed)
    path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "autoencoder.auh"
        save_checkpoint(
            Checkpoint(
                kind=AUTOENCODER_KIND,
                config={"model": model.config(), "train": ae_config, "seed": seed},
                arrays=state_dict_arrays(model),
                step=ae_config["steps"],
                extra={"latent_scale": latent_scale},
            ),
            path,
        )
        _write_loss_log(out_dir / "autoencoder_losses.csv", rows)
    return model, latent_scale, rows, path


def load_autoencoder(path) -> tuple[ToyAutoencoder, float]:
    ckpt = load_checkpoint(path, expect_kind=AUTOENCODER_KIND)
    model = build_autoencoder(ckpt.config["model"])
    load_state_dict_arrays(model, ckpt.arrays)
    model.eval()
    return model, float(ckpt.extra["latent_scale"])


class _ClipBank:
    """Precomputed latents and pose rasters for every train clip."""

    def __init__(self, model: MotionToVideoModel, clips: list[RigClip], partition):
        self.latents = []
        self.mouth = []
        self.face = []
        with torch.no_grad():
            for clip in clips:
                frames = to_tensor(clip.frames, torch.float32)
                self.latents.append(model.encode_frames(frames))
                m, f = clip_pose_rasters(clip, partition, model.image_size)
                self.mouth.append(m)
                self.face.append(f)


def _snapshot(kind, model, opt, g, step, full_config, extra=None) -> Checkpoint:
    arrays = state_dict_arrays(model)
    opt_arrays, opt_meta = optimizer_arrays(opt)
    arrays.update(opt_arrays)
    return Checkpoint(
        kind=kind,
        config=full_config,
        arrays=arrays,
        rng_state=_generator_state_bytes(g),
        step=step,
        extra={"optimizer": opt_meta, **(extra or {})},
    )


def _run_phase(
    kind: str,
    model: MotionToVideoModel,
    make_batch,
    params,
    config: dict,
    full_config: dict,
    out_dir,
    filename: str,
    seed: int,
    resume,
    use_temporal: bool,
    sched: DiffusionSchedule,
    extra: dict | None = None,
):
    opt = torch.optim.Adam(params, lr=config["lr"])
    g = torch.Generator().manual_seed(seed)
    start_step = 0
    if resume is not None:
        ckpt = load_checkpoint(resume, expect_kind=kind)
        load_state_dict_arrays(model, ckpt.arrays)
        load_optimizer_arrays(opt, ckpt.arrays, ckpt.extra["optimizer"])
        _restore_generator(g, ckpt.rng_state)
        start_step = ckpt.step

    out_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / filename

    last_good = _snapshot(kind, model, opt, g, start_step, full_config, extra)
    rows = []
    for step in range(start_step, config["steps"]):
        batch = make_batch(g)
        try:
            loss = diffusion_loss(model, batch, sched, generator=g, use_temporal=use_temporal)
        except TrainingFault as fault:
            if out_path is not None:
                save_checkpoint(last_good, out_path)
                fault.checkpoint_path = out_path
            raise
        opt.zero_grad()
        loss.backward()
        opt.step()
        rows.append({"step": step + 1, "loss": float(loss.detach())})
        if (step + 1) % config.get("checkpoint_every", 200) == 0 or step + 1 == config["steps"]:
            last_good = _snapshot(kind, model, opt, g, step + 1, full_config, extra)
            if out_path is not None:
                save_checkpoint(last_good, out_path)

    if out_path is not None:
        save_checkpoint(last_good, out_path)
    return rows, out_path


def train_phase1(
    dataset,
    config: dict,
    autoencoder: ToyAutoencoder,
    latent_scale: float,
    partition: LandmarkPartition | None = None,
    out_dir=None,
    seed: int = 0,
    resume=None,
) -> tuple[MotionToVideoModel, list[dict], Path | None]:
    """Single-frame training of UNet, ReferenceNet and the pose guiders.

    The temporal sites are excluded from both the forward pass and the
    optimizer; the autoencoder is frozen. Reference and pose conditioning
    are each dropped with probability ``cond_dropout`` (drawn per step).
    """
    clips = dataset.train_clips()
    if not clips:
        raise ConfigError("dataset has no training clips")
    partition = partition or LandmarkPartition.default()
    if dataset.image_size != config["image_size"]:
        raise ConfigError(
            f"dataset image size {dataset.image_size} != configured {config['image_size']}"
        )

    model_config = {
        "image_size": config["image_size"],
        "base_channels": config["base_channels"],
        "autoencoder": autoencoder.config(),
    }
    model = build_m2v_model(model_config, seed=seed, latent_scale=latent_scale)
    model.autoencoder.load_state_dict(autoencoder.state_dict())
    for p in model.autoencoder.parameters():
        p.requires_grad_(False)

    sched = make_schedule(**config["schedule"])
    bank = _ClipBank(model, clips, partition)
    phase_cfg = config["phase1"]
    dropout = phase_cfg["cond_dropout"]
    full_config = {"model": model_config, "schedule": config["schedule"], "train": phase_cfg,
                   "seed": seed}

    temporal_ids = {id(p) for p in model.temporal_parameters()}
    frozen_ids = {id(p) for p in model.autoencoder.parameters()}
    params = [
        p for p in model.parameters() if id(p) not in temporal_ids and id(p) not in frozen_ids
    ]

    def make_batch(g):
        idx = torch.randint(len(clips), (phase_cfg["batch"],), generator=g)
        lat, mouth, face, refs = [], [], [], []
        for ci in idx.tolist():
            t_total = bank.latents[ci].shape[0]
            fi = int(torch.randint(t_total, (1,), generator=g))
            ri = int(torch.randint(t_total, (1,), generator=g))
            lat.append(bank.latents[ci][fi : fi + 1])
            mouth.append(bank.mouth[ci][fi : fi + 1])
            face.append(bank.face[ci][fi : fi + 1])
            refs.append(bank.latents[ci][ri])
        batch = {"latents": torch.stack(lat)}
        if float(torch.rand((), generator=g)) >= dropout:
            batch["ref_latent"] = torch.stack(refs)
        if float(torch.rand((), generator=g)) >= dropout:
            batch["mouth_rasters"] = torch.stack(mouth)
            batch["face_rasters"] = torch.stack(face)
        return batch

    rows, out_path = _run_phase(
        PHASE1_KIND, model, make_batch, params, phase_cfg, full_config,
        out_dir, "m2v_phase1.auh", seed, resume, use_temporal=False, sched=sched,
        extra={"latent_scale": latent_scale, "phase": 1},
    )
    if out_dir is not None:
        _write_loss_log(Path(out_dir) / "m2v_phase1_losses.csv", rows)
    return model, rows, out_path


def load_m2v(path, expect_kind: str | None = None) -> tuple[MotionToVideoModel, dict]:
    ckpt = load_checkpoint(path)
    if ckpt.kind not in (PHASE1_KIND, PHASE2_KIND):
        raise PreconditionError(f"{path}: not a motion-to-video checkpoint ({ckpt.kind})")
    if expect_kind is not None and ckpt.kind != expect_kind:
        raise PreconditionError(f"{path}: expected {expect_kind!r}, found {ckpt.kind!r}")
    model = build_m2v_model(
        ckpt.config["model"], latent_scale=float(ckpt.extra.get("latent_scale", 1.0))
    )
    load_state_dict_arrays(model, ckpt.arrays)
    model.eval()
    return model, ckpt.config


def train_phase2(
    dataset,
    config: dict,
    phase1_model: MotionToVideoModel,
    partition: LandmarkPartition | None = None,
    out_dir=None,
    seed: int = 0,
    resume=None,
) -> tuple[MotionToVideoModel, list[dict], Path | None]:
    """Temporal-layer training on clip windows with ground-truth context.

    Only the temporal attention weights update; every other weight is frozen
    and must hash identically before and after. The motion context is the
    ``context_frames`` ground-truth frames preceding each training window.
    """
    clips = dataset.train_clips()
    if not clips:
        raise ConfigError("dataset has no training clips")
    partition = partition or LandmarkPartition.default()
    phase_cfg = config["phase2"]
    clip_frames = phase_cfg["clip_frames"]
    n_ctx = phase_cfg["context_frames"]
    too_short = [c.name for c in clips if len(c.landmarks) < clip_frames + n_ctx]
    if too_short:
        raise ConfigError(
            f"clips shorter than clip_frames + context = {clip_frames + n_ctx}: {too_short}"
        )

    model = phase1_model
    sched = make_schedule(**config["schedule"])
    for p in model.parameters():
        p.requires_grad_(False)
    params = list(model.temporal_parameters())
    for p in params:
        p.requires_grad_(True)

    bank = _ClipBank(model, clips, partition)
    dropout = phase_cfg.get("cond_dropout", 0.1)
    full_config = {"model": model.config(), "schedule": config["schedule"], "train": phase_cfg,
                   "seed": seed}

    def make_batch(g):
        ci = int(torch.randint(len(clips), (1,), generator=g))
        t_total = bank.latents[ci].shape[0]
        start = int(torch.randint(n_ctx, t_total - clip_frames + 1, (1,), generator=g))
        ri = int(torch.randint(t_total, (1,), generator=g))
        batch = {
            "latents": bank.latents[ci][start : start + clip_frames][None],
            "context_latents": bank.latents[ci][start - n_ctx : start][None],
        }
        if float(torch.rand((), generator=g)) >= dropout:
            batch["ref_latent"] = bank.latents[ci][ri][None]
        if float(torch.rand((), generator=g)) >= dropout:
            batch["mouth_rasters"] = bank.mouth[ci][start : start + clip_frames][None]
            batch["face_rasters"] = bank.face[ci][start : start + clip_frames][None]
            batch["context_mouth_rasters"] = bank.mouth[ci][start - n_ctx : start][None]
            batch["context_face_rasters"] = bank.face[ci][start - n_ctx : start][None]
        return batch

    rows, out_path = _run_phase(
        PHASE2_KIND, model, make_batch, params, phase_cfg, full_config,
        out_dir, "m2v.auh", seed, resume, use_temporal=True, sched=sched,
        extra={"latent_scale": float(model.latent_scale), "phase": 2},
    )
    if out_dir is not None:
        _write_loss_log(Path(out_dir) / "m2v_phase2_losses.csv", rows)
    return model, rows, out_path
