"""Small torch helpers shared across modules."""

from __future__ import annotations

import numpy as np
import torch


def to_tensor(array, dtype=torch.float32) -> torch.Tensor:
    """Copying numpy -> torch conversion; safe for read-only domain arrays."""
    return torch.from_numpy(np.array(array, dtype=np.float64, copy=True)).to(dtype)


def model_dtype(module: torch.nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype
