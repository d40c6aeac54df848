"""auhead: audio + action-unit driven talking-head pipeline.

Stage 1 (motion): a conditional VAE with a normalizing-flow prior maps
frame-level audio features and per-frame AU intensities to 162-point 2D
landmark trajectories. Stage 2 (video): a conditioned latent-diffusion
denoiser turns those trajectories plus a reference image into frames.
"""

__version__ = "0.1.0"

from . import diffusion, facs, geometry, ingest, metrics, motion
from .errors import (
    AuheadError,
    ConfigError,
    DataError,
    DegenerateInputError,
    InvariantError,
    PreconditionError,
    SchemaError,
    ShapeError,
    TrainingFault,
)

__all__ = [
    "diffusion",
    "facs",
    "geometry",
    "ingest",
    "metrics",
    "motion",
    "AuheadError",
    "ConfigError",
    "DataError",
    "DegenerateInputError",
    "InvariantError",
    "PreconditionError",
    "SchemaError",
    "ShapeError",
    "TrainingFault",
]
