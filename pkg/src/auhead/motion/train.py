"""Training loops for the sync expert and the motion generator, plus
prior-driven motion generation and evaluation helpers.

Both loops are deterministic under a fixed seed: every random draw (batch
indices, crop offsets, reparameterization noise) comes from one explicit
torch.Generator whose state is stored in checkpoints, so an interrupted run
resumes with bit-identical subsequent losses.
"""

from __future__ import annotations

import copy
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
from ..facs import AUSequence, LandmarkSequence, NUM_LANDMARKS, au_ordinal
from ..ingest.audio import AudioFeatureSequence, build_conditioning
from ..ingest.rig import RigClip
from ..torchutils import to_tensor
from .losses import LossWeights, check_finite_terms, vmg_loss_terms
from .model import LANDMARK_WIDTH, VMGModel, build_vmg_model
from .sync import SyncExpert, build_sync_expert, cosine_similarity, sliding_windows, sync_scores

VMG_KIND = "vmg"
SYNC_KIND = "sync-expert"


def _generator_state_bytes(g: torch.Generator) -> bytes:
    return g.get_state().numpy().tobytes()


def _restore_generator(g: torch.Generator, state: bytes) -> None:
    g.set_state(torch.from_numpy(np.frombuffer(state, dtype=np.uint8).copy()))


def set_step_lr(opt, base_lr: float, step: int, total_steps: int, decay: str) -> None:
    """Per-step learning rate; a pure function of the step index so resumed
    runs see the same schedule."""
    if decay == "cosine":
        lr = base_lr * 0.5 * (1.0 + np.cos(np.pi * step / max(1, total_steps)))
    elif decay == "none":
        lr = base_lr
    else:
        raise ConfigError(f"unknown lr_decay {decay!r}")
    for group in opt.param_groups:
        group["lr"] = lr


def _clip_tensors(clips: list[RigClip], dtype=torch.float32):
    flats, conds, audios = [], [], []
    for clip in clips:
        t = len(clip.landmarks)
        flats.append(to_tensor(clip.landmarks.points.reshape(t, LANDMARK_WIDTH), dtype))
        cond = build_conditioning(clip.audio, clip.aus)
        conds.append(to_tensor(cond.frames, dtype))
        audios.append(to_tensor(clip.audio.frames, dtype))
    return flats, conds, audios


def _write_loss_log(path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if c != "step" else str(row[c]) for c in columns))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Sync expert
# ---------------------------------------------------------------------------


def train_sync_expert(
    dataset,
    config: dict,
    out_dir=None,
    seed: int = 0,
) -> tuple[SyncExpert, list[dict], Path | None]:
    """Contrastive training on aligned vs time-shifted window pairs.

    Positives use the cosine objective directly; negatives are hinged at
    ``margin``. Returns (expert, per-step loss rows, checkpoint path).
    """
    clips = dataset.train_clips()
    window = config["window"]
    min_shift = config["min_negative_shift"]
    if min_shift < window:
        raise ConfigError(f"min_negative_shift {min_shift} must be >= window {window}")
    short = [c.name for c in clips if len(c.landmarks) < window + min_shift + 1]
    if short or not clips:
        raise ConfigError(
            f"dataset clips too short for {window}-frame windows with shift {min_shift}: {short}"
        )

    audio_width = clips[0].audio.width
    model_config = {
        "audio_width": audio_width,
        "window": window,
        "embed_width": config["embed_width"],
        "hidden": config["hidden"],
    }
    expert = build_sync_expert(model_config, seed=seed)
    opt = torch.optim.Adam(expert.parameters(), lr=config["lr"])
    g = torch.Generator().manual_seed(seed)
    flats, _, audios = _clip_tensors(clips)

    rows = []
    for step in range(config["steps"]):
        idx = torch.randint(len(clips), (config["batch_windows"],), generator=g)
        lm_wins, au_pos, au_neg = [], [], []
        for ci in idx.tolist():
            t = flats[ci].shape[0]
            start = int(torch.randint(t - window + 1, (1,), generator=g))
            max_shift = t - window - start
            # Negative offset: magnitude >= min_shift, sign chosen by room.
            candidates = []
            if max_shift >= min_shift:
                candidates.append(1)
            if start >= min_shift:
                candidates.append(-1)
            sign = candidates[int(torch.randint(len(candidates), (1,), generator=g))]
            room = max_shift if sign > 0 else start
            shift = int(torch.randint(min_shift, room + 1, (1,), generator=g)) * sign
            lm_wins.append(flats[ci][start : start + window])
            au_pos.append(audios[ci][start : start + window])
            au_neg.append(audios[ci][start + shift : start + shift + window])

        lm_emb = expert.embed_landmarks(torch.stack(lm_wins))
        pos_cos = cosine_similarity(lm_emb, expert.embed_audio(torch.stack(au_pos)))
        neg_cos = cosine_similarity(lm_emb, expert.embed_audio(torch.stack(au_neg)))
        pos_loss = (1.0 - pos_cos).mean()
        neg_loss = torch.relu(neg_cos - config["margin"]).mean()
        loss = pos_loss + neg_loss
        check_finite_terms({"sync-expert total": loss})

        opt.zero_grad()
        loss.backward()
        opt.step()
        rows.append(
            {
                "step": step + 1,
                "pos": float(pos_loss.detach()),
                "neg": float(neg_loss.detach()),
                "total": float(loss.detach()),
            }
        )

    ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_dir / "sync_expert.auh"
        save_checkpoint(
            Checkpoint(
                kind=SYNC_KIND,
                config={"model": model_config, "train": config, "seed": seed},
                arrays=state_dict_arrays(expert),
                rng_state=_generator_state_bytes(g),
                step=config["steps"],
            ),
            ckpt_path,
        )
        _write_loss_log(out_dir / "sync_losses.csv", ["step", "pos", "neg", "total"], rows)
    return expert, rows, ckpt_path


def load_sync_expert(path) -> SyncExpert:
    ckpt = load_checkpoint(path, expect_kind=SYNC_KIND)
    expert = build_sync_expert(ckpt.config["model"])
    load_state_dict_arrays(expert, ckpt.arrays)
    expert.eval()
    return expert


def sync_discrimination_auc(expert: SyncExpert, clips: list[RigClip], shift: int = 10) -> float:
    """AUC of aligned vs shifted window scores: P(aligned > shifted)."""
    flats, _, audios = _clip_tensors(clips)
    pos, neg = [], []
    with torch.no_grad():
        for lm, au in zip(flats, audios):
            pos.append(sync_scores(expert, lm, au).numpy())
            neg.append(sync_scores(expert, lm, au, shift=shift).numpy())
    pos = np.concatenate(pos)
    neg = np.concatenate(neg)
    greater = (pos[:, None] > neg[None, :]).mean()
    ties = (pos[:, None] == neg[None, :]).mean()
    return float(greater + 0.5 * ties)


# ---------------------------------------------------------------------------
# Motion generator
# ---------------------------------------------------------------------------

VMG_LOG_COLUMNS = ["step", "mse", "kl", "cont", "sync", "total"]


def _vmg_snapshot(model, opt, g, step, full_config) -> Checkpoint:
    arrays = state_dict_arrays(model)
    opt_arrays, opt_meta = optimizer_arrays(opt)
    arrays.update(opt_arrays)
    return Checkpoint(
        kind=VMG_KIND,
        config=full_config,
        arrays=arrays,
        rng_state=_generator_state_bytes(g),
        step=step,
        extra={"optimizer": opt_meta},
    )


def train_vmg(
    dataset,
    config: dict,
    sync_expert: SyncExpert | None,
    out_dir=None,
    seed: int = 0,
    resume=None,
) -> tuple[VMGModel, list[dict], Path | None]:
    """Optimize the weighted four-term objective on rig clips.

    The sync expert is frozen; it is only consulted for the sync term, and a
    zero sync weight trains without one. On a non-finite loss the last good
    snapshot is written out and a TrainingFault raised.
    """
    clips = dataset.train_clips()
    if not clips:
        raise ConfigError("dataset has no training clips")
    clip_frames = config["clip_frames"]
    if any(len(c.landmarks) < clip_frames for c in clips):
        raise ConfigError(f"all training clips must have at least {clip_frames} frames")

    weights = LossWeights(**config["loss_weights"])
    if weights.sync > 0 and sync_expert is None:
        raise PreconditionError("sync weight > 0 but no sync expert was provided")
    audio_width = clips[0].audio.width
    model_config = {
        "audio_width": audio_width,
        "latent_width": config["latent_width"],
        "hidden": config["hidden"],
        "flow_hidden": config["flow_hidden"],
        "num_layers": config["num_layers"],
        "kernel_size": config["kernel_size"],
        "max_dilation": config["max_dilation"],
        "flow_layers": config["flow_layers"],
    }
    full_config = {"model": model_config, "train": config, "seed": seed}

    model = build_vmg_model(model_config, seed=seed)
    flats, conds, audios = _clip_tensors(clips)
    all_flat = torch.cat(flats)
    all_cond = torch.cat(conds)
    model.set_normalization(
        all_flat.mean(dim=0), all_flat.std(dim=0), all_cond.mean(dim=0), all_cond.std(dim=0)
    )
    opt = torch.optim.Adam(model.parameters(), lr=config["lr"])
    g = torch.Generator().manual_seed(seed)
    start_step = 0
    if resume is not None:
        ckpt = load_checkpoint(resume, expect_kind=VMG_KIND)
        load_state_dict_arrays(model, ckpt.arrays)
        load_optimizer_arrays(opt, ckpt.arrays, ckpt.extra["optimizer"])
        _restore_generator(g, ckpt.rng_state)
        start_step = ckpt.step

    if sync_expert is not None:
        sync_expert.eval()
        for p in sync_expert.parameters():
            p.requires_grad_(False)

    out_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / "vmg.auh"

    last_good = _vmg_snapshot(model, opt, g, start_step, full_config)
    rows = []
    for step in range(start_step, config["steps"]):
        set_step_lr(opt, config["lr"], step, config["steps"], config.get("lr_decay", "cosine"))
        idx = torch.randint(len(clips), (config["batch_clips"],), generator=g)
        batch_flat, batch_cond, batch_audio = [], [], []
        for ci in idx.tolist():
            t = flats[ci].shape[0]
            start = int(torch.randint(t - clip_frames + 1, (1,), generator=g))
            batch_flat.append(flats[ci][start : start + clip_frames])
            batch_cond.append(conds[ci][start : start + clip_frames])
            batch_audio.append(audios[ci][start : start + clip_frames])
        target = torch.stack(batch_flat)
        cond = torch.stack(batch_cond)
        audio = torch.stack(batch_audio)

        mu, log_sigma = model.encode_t(target, cond)
        noise = torch.randn(mu.shape, generator=g, dtype=mu.dtype)
        z = mu + torch.exp(log_sigma) * noise
        pred = model.decode_t(z, cond)
        terms = vmg_loss_terms(
            target, pred, mu, log_sigma, z, model.prior, model.normalize_cond(cond),
            sync_expert if weights.sync > 0 else None,
            audio if weights.sync > 0 else None,
            weights,
        )
        try:
            check_finite_terms(terms)
        except TrainingFault as fault:
            if out_path is not None:
                save_checkpoint(last_good, out_path)
                fault.checkpoint_path = out_path
            raise

        opt.zero_grad()
        terms["total"].backward()
        opt.step()
        rows.append({"step": step + 1, **{k: float(v.detach()) for k, v in terms.items()}})

        if (step + 1) % config["checkpoint_every"] == 0 or step + 1 == config["steps"]:
            last_good = _vmg_snapshot(model, opt, g, step + 1, full_config)
            if out_path is not None:
                save_checkpoint(last_good, out_path)

    if out_path is not None:
        save_checkpoint(last_good, out_path)
        _write_loss_log(out_dir / "vmg_losses.csv", VMG_LOG_COLUMNS, rows)
    return model, rows, out_path


def load_vmg(path) -> VMGModel:
    ckpt = load_checkpoint(path, expect_kind=VMG_KIND)
    model = build_vmg_model(ckpt.config["model"])
    load_state_dict_arrays(model, ckpt.arrays)
    model.eval()
    return model


def generate_motion(
    model: VMGModel, audio: AudioFeatureSequence, aus: AUSequence, seed: int = 0
) -> LandmarkSequence:
    """Sample the flow prior and decode: z ~ p(z|c), L = decoder(z, c)."""
    cond = build_conditioning(audio, aus)
    dtype = next(model.parameters()).dtype
    c = to_tensor(cond.frames, dtype)[None]
    g = torch.Generator().manual_seed(seed)
    z_base = torch.randn((1, len(cond), model.latent_width), generator=g, dtype=dtype)
    with torch.no_grad():
        z = model.prior.inverse(z_base, model.normalize_cond(c))
        flat = model.decode_t(z, c)
    pts = flat[0].double().numpy().reshape(len(cond), NUM_LANDMARKS, 2)
    return LandmarkSequence(pts, cond.fps)


def validation_mse(model: VMGModel, clips: list[RigClip], seed: int = 0) -> float:
    """Mean squared coordinate error of prior-driven generation vs ground truth."""
    if not clips:
        raise ShapeError("no validation clips")
    errors = []
    for i, clip in enumerate(clips):
        gen = generate_motion(model, clip.audio, clip.aus, seed=seed + i)
        errors.append(float(((gen.points - clip.landmarks.points) ** 2).mean()))
    return float(np.mean(errors))


def mean_predictor_baseline(train_clips: list[RigClip], val_clips: list[RigClip]) -> float:
    """MSE of predicting the training-set mean frame for every val frame."""
    mean_frame = np.mean(
        np.concatenate([c.landmarks.points for c in train_clips], axis=0), axis=0
    )
    errors = [float(((c.landmarks.points - mean_frame) ** 2).mean()) for c in val_clips]
    return float(np.mean(errors))


def au_sweep_response(
    model: VMGModel,
    audio: AudioFeatureSequence,
    base_aus: AUSequence,
    au_id: int,
    low: float,
    high: float,
    seed: int = 0,
) -> np.ndarray:
    """Landmark displacement when one AU sweeps low -> high, audio fixed.

    Same prior seed for both runs, so the difference isolates the AU effect.
    """
    k = au_ordinal(au_id)
    lo = np.array(base_aus.frames, copy=True)
    hi = np.array(base_aus.frames, copy=True)
    lo[:, k] = low
    hi[:, k] = high
    gen_lo = generate_motion(model, audio, AUSequence(lo, base_aus.fps), seed=seed)
    gen_hi = generate_motion(model, audio, AUSequence(hi, base_aus.fps), seed=seed)
    return gen_hi.points - gen_lo.points
