"""End-to-end inference: audio + AUs + reference image -> video frames.

generate_motion -> rigid alignment to the reference landmarks -> mouth/face
keypoint rasters -> chunked DDIM sampling with last-N-frame context
carry-over -> decoded frames. Deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ShapeError
from ..facs import AUSequence, LandmarkFrame, LandmarkPartition, LandmarkSequence
from ..geometry import apply_transform, procrustes_align, rasterize_keypoints
from ..ingest.audio import AudioFeatureSequence
from ..motion.model import VMGModel
from ..motion.train import generate_motion
from .model import MotionToVideoModel
from .sampling import DEFAULT_DDIM_STEPS, ddim_sample
from .schedule import DiffusionSchedule
from ..torchutils import to_tensor


@dataclass
class PipelineResult:
    frames: np.ndarray  # (T, H, W) in [0, 1]
    motion: LandmarkSequence  # aligned landmark trajectory actually rendered


def _frame_rasters(model, frames_pts, partition):
    mouth, face = [], []
    for pts in frames_pts:
        frame = LandmarkFrame(pts)
        mouth.append(rasterize_keypoints(frame, partition, "mouth", model.image_size).grid)
        face.append(rasterize_keypoints(frame, partition, "face", model.image_size).grid)
    return (
        to_tensor(np.stack(mouth), torch.float32),
        to_tensor(np.stack(face), torch.float32),
    )


def infer_pipeline(
    ref_image: np.ndarray,
    ref_landmarks: LandmarkFrame,
    audio: AudioFeatureSequence,
    aus: AUSequence,
    vmg: VMGModel,
    m2v: MotionToVideoModel,
    sched: DiffusionSchedule,
    partition: LandmarkPartition | None = None,
    seed: int = 0,
    ddim_steps: int = DEFAULT_DDIM_STEPS,
    chunk_frames: int = 16,
    context_frames: int = 2,
    carry_context: bool = True,
) -> PipelineResult:
    """Run both stages; output frame count equals the AU sequence length.

    With ``carry_context`` the motion context of each chunk after the first
    is the last ``context_frames`` generated latents of the previous chunk;
    ablating it reuses the reference context for every chunk.
    """
    if len(audio) != len(aus):
        raise ShapeError(f"audio frames {len(audio)} != AU frames {len(aus)}")
    partition = partition or LandmarkPartition.default()
    ref_image = np.asarray(ref_image, dtype=np.float64)
    if ref_image.shape != (m2v.image_size, m2v.image_size):
        raise ShapeError(
            f"reference image shape {ref_image.shape} != model size {m2v.image_size}"
        )

    motion = generate_motion(vmg, audio, aus, seed=seed)
    xf = procrustes_align(motion.frame(0), ref_landmarks)
    aligned = apply_transform(motion, xf)
    total = len(aligned)

    mouth_all, face_all = _frame_rasters(m2v, aligned.points, partition)
    ref_mouth, ref_face = _frame_rasters(m2v, ref_landmarks.points[None], partition)

    ref_tensor = to_tensor(ref_image, torch.float32)
    with torch.no_grad():
        ref_latent = m2v.encode_frames(ref_tensor[None])  # (1, c, h, w)
        ref_feats = m2v.reference_features(ref_latent)
        ref_pose = m2v.pose_residual(ref_mouth[:, None], ref_face[:, None])

    g = torch.Generator().manual_seed(seed + 1)
    latent_shape = ref_latent.shape[1:]
    chunks = []
    prev_latents = None
    prev_pose = None
    with torch.no_grad():
        for start in range(0, total, chunk_frames):
            stop = min(start + chunk_frames, total)
            n = stop - start
            mouth = mouth_all[start:stop][None]
            face = face_all[start:stop][None]
            pose = m2v.pose_residual(
                mouth.reshape(n, 1, *mouth.shape[2:]), face.reshape(n, 1, *face.shape[2:])
            ).view(1, n, *latent_shape)

            if carry_context and prev_latents is not None:
                ctx = prev_latents[:, -context_frames:]
                ctx_pose = prev_pose[:, -context_frames:]
            else:
                ctx = ref_latent[:, None].expand(1, context_frames, *latent_shape)
                ctx_pose = ref_pose[:, None].expand(1, context_frames, *latent_shape)

            latents = ddim_sample(
                m2v,
                sched,
                shape=(1, n, *latent_shape),
                num_steps=ddim_steps,
                generator=g,
                ref_feats=ref_feats,
                pose_residuals=pose,
                motion_context=ctx,
                context_pose_residuals=ctx_pose,
                use_temporal=True,
            )
            chunks.append(latents)
            prev_latents = latents
            prev_pose = pose

        all_latents = torch.cat(chunks, dim=1)
        frames = m2v.decode_latents(all_latents)[0]
    return PipelineResult(
        frames=np.clip(frames.double().numpy(), 0.0, 1.0),
        motion=aligned,
    )


def frame_difference_stats(frames: np.ndarray, chunk_frames: int) -> tuple[float, float]:
    """(mean boundary diff, median intra-chunk diff) of consecutive frames.

    The difference metric is the mean absolute pixel change between adjacent
    frames; boundaries are the seams between successive sampling chunks.
    """
    total = frames.shape[0]
    diffs = np.abs(np.diff(frames, axis=0)).mean(axis=(1, 2))
    boundary_idx = [i for i in range(total - 1) if (i + 1) % chunk_frames == 0]
    intra_idx = [i for i in range(total - 1) if (i + 1) % chunk_frames != 0]
    if not boundary_idx or not intra_idx:
        raise ShapeError("need at least two chunks to measure boundary continuity")
    return float(diffs[boundary_idx].mean()), float(np.median(diffs[intra_idx]))
