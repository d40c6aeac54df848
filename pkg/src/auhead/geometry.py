"""Rigid (similarity) alignment and keypoint rasterization.

Everything here is a pure function over numpy arrays; safe to parallelize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DegenerateInputError, ShapeError
from .facs import LandmarkFrame, LandmarkPartition, LandmarkSequence

# Blob std in pixels at the 64x64 reference resolution; scaled linearly with
# resolution. Blobs are truncated at BLOB_CUTOFF_SIGMAS to keep rasters of
# disjoint point sets exactly additive.
BLOB_SIGMA_AT_64 = 1.5
BLOB_CUTOFF_SIGMAS = 3.0


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R @ p + translation, with R a proper rotation."""

    scale: float
    rotation: np.ndarray  # (2, 2)
    translation: np.ndarray  # (2,)

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (2, 2) or tr.shape != (2,):
            raise ShapeError("rotation must be 2x2 and translation length-2")
        if not self.scale > 0:
            raise DataError(f"scale must be positive, got {self.scale}")
        if not np.allclose(rot.T @ rot, np.eye(2), atol=1e-9):
            raise DataError("rotation matrix is not orthogonal")
        if np.linalg.det(rot) < 0:
            raise DataError("rotation matrix must have determinant +1")
        rot = rot.copy()
        tr = tr.copy()
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(2), np.zeros(2))

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying ``inner`` first, then ``self``."""
        return SimilarityTransform(
            self.scale * inner.scale,
            self.rotation @ inner.rotation,
            self.scale * self.rotation @ inner.translation + self.translation,
        )

    def inverse(self) -> "SimilarityTransform":
        inv_rot = self.rotation.T
        return SimilarityTransform(
            1.0 / self.scale,
            inv_rot,
            -(1.0 / self.scale) * inv_rot @ self.translation,
        )


def procrustes_align(src: LandmarkFrame, ref: LandmarkFrame) -> SimilarityTransform:
    """Least-squares similarity transform mapping src points onto ref points.

    Closed-form solution (SVD of the cross-covariance, Umeyama); minimizes
    sum_i || s R src_i + t - ref_i ||^2 globally.
    """
    x = src.points
    y = ref.points
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    var_x = (xc**2).sum() / x.shape[0]
    if var_x < 1e-24:
        raise DegenerateInputError("all source points coincide; similarity is undefined")

    cov = yc.T @ xc / x.shape[0]
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    corr = np.diag([1.0, d])
    rot = u @ corr @ vt
    scale = float(np.trace(np.diag(s) @ corr) / var_x)
    if scale <= 0:
        raise DegenerateInputError("degenerate point configuration: non-positive scale")
    trans = mu_y - scale * rot @ mu_x
    return SimilarityTransform(scale, rot, trans)


def apply_transform(seq: LandmarkSequence, xf: SimilarityTransform) -> LandmarkSequence:
    """Apply one similarity transform to every frame of a sequence."""
    pts = seq.points.reshape(-1, 2)
    out = xf.apply_points(pts).reshape(seq.points.shape)
    return LandmarkSequence(out, seq.fps)


@dataclass(frozen=True)
class KeypointRaster:
    """Single-channel H x W raster of Gaussian keypoint blobs in [0, 1]."""

    grid: np.ndarray  # (H, W)
    resolution: tuple[int, int]

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 2:
            raise ShapeError(f"raster grid must be 2-D, got shape {grid.shape}")
        if grid.shape != tuple(self.resolution):
            raise ShapeError("raster grid shape does not match resolution metadata")
        grid = grid.copy()
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)


def render_points(points: np.ndarray, resolution: int, sigma: float | None = None) -> np.ndarray:
    """Render normalized points as truncated Gaussian blobs on an HxH grid.

    Coordinates outside [0,1]^2 are clipped to the unit square. Blob peaks
    are 1.0; overlapping blobs add and the result is clamped to [0, 1].
    """
    if resolution <= 0:
        raise ConfigError(f"raster resolution must be positive, got {resolution}")
    if sigma is None:
        sigma = BLOB_SIGMA_AT_64 * resolution / 64.0
    grid = np.zeros((resolution, resolution))
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.size == 0:
        return grid

    pts = np.clip(pts, 0.0, 1.0)
    # x maps to columns, y to rows; pixel centers at (i + 0.5) / res.
    px = pts[:, 0] * resolution - 0.5
    py = pts[:, 1] * resolution - 0.5
    cols = np.arange(resolution)
    rows = np.arange(resolution)
    dx2 = (cols[None, :] - px[:, None]) ** 2
    dy2 = (rows[None, :] - py[:, None]) ** 2
    d2 = dy2[:, :, None] + dx2[:, None, :]  # (n_points, H, W)
    cutoff2 = (BLOB_CUTOFF_SIGMAS * sigma) ** 2
    blobs = np.where(d2 <= cutoff2, np.exp(-0.5 * d2 / sigma**2), 0.0)
    grid = blobs.sum(axis=0)
    return np.clip(grid, 0.0, 1.0)


def rasterize_keypoints(
    frame: LandmarkFrame,
    part: LandmarkPartition,
    which: str,
    resolution: int,
) -> KeypointRaster:
    """Raster of one partition subset ('mouth' | 'face' | 'all') of a frame."""
    if which == "mouth":
        idx = list(part.mouth_indices)
    elif which == "face":
        idx = list(part.face_indices)
    elif which == "all":
        idx = list(range(frame.points.shape[0]))
    else:
        raise ConfigError(f"subset must be 'mouth', 'face' or 'all', got {which!r}")
    grid = render_points(frame.points[idx], resolution)
    return KeypointRaster(grid, (resolution, resolution))
