from .flow import FlowPrior, ResidualCoupling
from .losses import (
    LossWeights,
    check_finite_terms,
    continuity_loss,
    gaussian_log_density,
    kl_loss_mc,
    kl_samples_mc,
    mse_loss,
    sync_loss,
    vmg_loss,
    vmg_loss_terms,
)
from .model import (
    LANDMARK_WIDTH,
    PosteriorParams,
    VMGModel,
    build_vmg_model,
    decode,
    encode,
    flow_forward,
    flow_inverse,
    flow_log_density,
    reparameterize,
)
from .sync import (
    SyncExpert,
    build_sync_expert,
    cosine_similarity,
    sliding_windows,
    sync_embed,
    sync_scores,
)
from .train import (
    au_sweep_response,
    generate_motion,
    load_sync_expert,
    load_vmg,
    mean_predictor_baseline,
    sync_discrimination_auc,
    train_sync_expert,
    train_vmg,
    validation_mse,
)

__all__ = [
    "FlowPrior",
    "ResidualCoupling",
    "LossWeights",
    "check_finite_terms",
    "continuity_loss",
    "gaussian_log_density",
    "kl_loss_mc",
    "kl_samples_mc",
    "mse_loss",
    "sync_loss",
    "vmg_loss",
    "vmg_loss_terms",
    "LANDMARK_WIDTH",
    "PosteriorParams",
    "VMGModel",
    "build_vmg_model",
    "decode",
    "encode",
    "flow_forward",
    "flow_inverse",
    "flow_log_density",
    "reparameterize",
    "SyncExpert",
    "build_sync_expert",
    "cosine_similarity",
    "sliding_windows",
    "sync_embed",
    "sync_scores",
    "au_sweep_response",
    "generate_motion",
    "load_sync_expert",
    "load_vmg",
    "mean_predictor_baseline",
    "sync_discrimination_auc",
    "train_sync_expert",
    "train_vmg",
    "validation_mse",
]
