"""Evaluation metrics: PSNR, SSIM, landmark distances, Frechet distance.

All metrics are deterministic pure functions. Landmark sequences are assumed
pre-aligned (see geometry.procrustes_align); no cropping happens here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.ndimage import uniform_filter

from .errors import DataError, ShapeError
from .facs import LandmarkPartition, LandmarkSequence

SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    """10 * log10(peak^2 / MSE); identical images return math.inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr inputs differ in shape: {a.shape} vs {b.shape}")
    if not peak > 0:
        raise DataError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, dynamic_range: float = 1.0) -> float:
    """Mean local SSIM over uniform windows with the standard k1/k2 constants.

    Local moments come from a ``window``-sized box filter; only windows fully
    inside the image contribute to the mean (the half-window border is
    cropped), so identical images score exactly 1.0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeError("ssim expects 2-D grayscale images")
    if min(a.shape) < window:
        raise ShapeError(f"image {a.shape} smaller than the {window}x{window} window")
    if not dynamic_range > 0:
        raise DataError("dynamic_range must be positive")

    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    mu_a = uniform_filter(a, window)
    mu_b = uniform_filter(b, window)
    # Biased (filter-based) second moments, as in the original SSIM index.
    var_a = uniform_filter(a * a, window) - mu_a**2
    var_b = uniform_filter(b * b, window) - mu_b**2
    cov = uniform_filter(a * b, window) - mu_a * mu_b

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    ssim_map = num / den
    pad = window // 2
    valid = ssim_map[pad : a.shape[0] - pad, pad : a.shape[1] - pad]
    return float(valid.mean())


def lmd(
    pred: LandmarkSequence,
    gt: LandmarkSequence,
    part: LandmarkPartition,
    which: str = "full",
) -> float:
    """Mean Euclidean point distance over frames and the selected index set.

    ``which`` is 'mouth' (M-LMD) or 'full' (F-LMD). Sequences must be
    pre-aligned and of equal length.
    """
    if len(pred) != len(gt):
        raise ShapeError(f"sequence lengths differ: {len(pred)} vs {len(gt)}")
    if which == "mouth":
        idx = list(part.mouth_indices)
    elif which == "full":
        idx = list(range(pred.points.shape[1]))
    else:
        raise DataError(f"which must be 'mouth' or 'full', got {which!r}")
    diff = pred.points[:, idx, :] - gt.points[:, idx, :]
    return float(np.linalg.norm(diff, axis=-1).mean())


@dataclass(frozen=True)
class EmbeddingSet:
    """N x E feature vectors from a pluggable extractor; N >= 2 for moments."""

    features: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.features, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"embeddings must be 2-D (N, E), got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise DataError("need at least 2 embeddings to estimate covariance")
        if not np.all(np.isfinite(arr)):
            raise DataError("embeddings must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "features", arr)


def pixel_embeddings(frames: np.ndarray, size: int = 8) -> EmbeddingSet:
    """Default Frechet feature extractor: normalized downsampled pixels.

    Frames (N, H, W) in [0, 1] are block-averaged to size x size, flattened,
    and mapped through the fixed affine 2*(x - 0.5). The normalization is
    input-independent so the extractor never couples the two sets it feeds.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ShapeError(f"frames must be (N, H, W), got shape {frames.shape}")
    n, h, w = frames.shape
    if h % size or w % size:
        raise ShapeError(f"frame size {h}x{w} not divisible by embed size {size}")
    pooled = frames.reshape(n, size, h // size, size, w // size).mean(axis=(2, 4))
    return EmbeddingSet(2.0 * (pooled.reshape(n, -1) - 0.5))


def frechet_distance(x: EmbeddingSet, y: EmbeddingSet, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussians fitted to two embedding sets.

    ||mu_x - mu_y||^2 + Tr(Sx + Sy - 2 (Sx Sy)^{1/2}), computed with the
    symmetric product sqrt; covariances are regularized with eps * I.
    """
    fx, fy = x.features, y.features
    if fx.shape[1] != fy.shape[1]:
        raise ShapeError(f"embedding widths differ: {fx.shape[1]} vs {fy.shape[1]}")
    mu_x, mu_y = fx.mean(axis=0), fy.mean(axis=0)
    dim = fx.shape[1]
    cov_x = np.cov(fx, rowvar=False).reshape(dim, dim) + eps * np.eye(dim)
    cov_y = np.cov(fy, rowvar=False).reshape(dim, dim) + eps * np.eye(dim)

    sqrt_x = _symmetric_sqrt(cov_x)
    cross = _symmetric_sqrt(sqrt_x @ cov_y @ sqrt_x)
    value = float(
        np.sum((mu_x - mu_y) ** 2) + np.trace(cov_x) + np.trace(cov_y) - 2.0 * np.trace(cross)
    )
    if not np.isfinite(value):
        raise DataError("non-finite moments in Frechet distance")
    return value


def _symmetric_sqrt(mat: np.ndarray) -> np.ndarray:
    # Eigendecomposition of the symmetrized matrix; clip tiny negatives.
    sym = (mat + mat.T) / 2.0
    vals, vecs = scipy.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass
class ClipMetrics:
    name: str
    psnr: float
    ssim: float
    m_lmd: float
    f_lmd: float


@dataclass
class MetricReport:
    """Per-clip rows plus aggregate means; frechet is corpus-level."""

    clips: list[ClipMetrics] = field(default_factory=list)
    frechet: float = math.nan

    def aggregate(self) -> dict[str, float]:
        if not self.clips:
            return {"psnr": math.nan, "ssim": math.nan, "m_lmd": math.nan, "f_lmd": math.nan}
        return {
            "psnr": float(np.mean([c.psnr for c in self.clips])),
            "ssim": float(np.mean([c.ssim for c in self.clips])),
            "m_lmd": float(np.mean([c.m_lmd for c in self.clips])),
            "f_lmd": float(np.mean([c.f_lmd for c in self.clips])),
        }

    def to_text(self) -> str:
        lines = []
        for c in self.clips:
            lines.append(
                f"clip {c.name}: psnr={c.psnr:.6g} ssim={c.ssim:.6g} "
                f"m_lmd={c.m_lmd:.6g} f_lmd={c.f_lmd:.6g}"
            )
        agg = self.aggregate()
        lines.append(
            "aggregate: psnr={psnr:.6g} ssim={ssim:.6g} "
            "m_lmd={m_lmd:.6g} f_lmd={f_lmd:.6g}".format(**agg)
        )
        lines.append(f"frechet: {self.frechet:.6g}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Machine-readable CSV: one row per clip, documented columns."""
        lines = ["clip,psnr,ssim,m_lmd,f_lmd"]
        for c in self.clips:
            lines.append(f"{c.name},{c.psnr!r},{c.ssim!r},{c.m_lmd!r},{c.f_lmd!r}")
        return "\n".join(lines) + "\n"
