from .autoencoder import ToyAutoencoder, build_autoencoder, train_autoencoder
from .model import (
    MotionToVideoModel,
    PoseGuider,
    ReferenceFusion,
    ReferenceNet,
    TemporalAttention,
    UNetDenoiser,
    build_m2v_model,
    timestep_embedding,
)
from .pipeline import PipelineResult, frame_difference_stats, infer_pipeline
from .sampling import DEFAULT_DDIM_STEPS, ddim_sample
from .schedule import (
    DiffusionSchedule,
    ddim_step_indices,
    ddim_update,
    iterate_recurrence,
    make_schedule,
    q_sample,
)
from .train import (
    AUTOENCODER_KIND,
    PHASE1_KIND,
    PHASE2_KIND,
    clip_pose_rasters,
    diffusion_loss,
    load_autoencoder,
    load_m2v,
    train_autoencoder_stage,
    train_phase1,
    train_phase2,
)

__all__ = [
    "ToyAutoencoder",
    "build_autoencoder",
    "train_autoencoder",
    "MotionToVideoModel",
    "PoseGuider",
    "ReferenceFusion",
    "ReferenceNet",
    "TemporalAttention",
    "UNetDenoiser",
    "build_m2v_model",
    "timestep_embedding",
    "PipelineResult",
    "frame_difference_stats",
    "infer_pipeline",
    "DEFAULT_DDIM_STEPS",
    "ddim_sample",
    "DiffusionSchedule",
    "ddim_step_indices",
    "ddim_update",
    "iterate_recurrence",
    "make_schedule",
    "q_sample",
    "AUTOENCODER_KIND",
    "PHASE1_KIND",
    "PHASE2_KIND",
    "clip_pose_rasters",
    "diffusion_loss",
    "load_autoencoder",
    "load_m2v",
    "train_autoencoder_stage",
    "train_phase1",
    "train_phase2",
]
