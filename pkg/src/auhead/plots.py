"""Landmark plot emission; the file-based stand-in for an interactive view."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .facs import LandmarkPartition, LandmarkSequence


def plot_landmark_frame(points, path, part: LandmarkPartition | None = None) -> None:
    part = part or LandmarkPartition.default()
    fig, ax = plt.subplots(figsize=(4, 4))
    face = list(part.face_indices)
    mouth = list(part.mouth_indices)
    ax.scatter(points[face, 0], points[face, 1], s=6, c="steelblue", label="face")
    ax.scatter(points[mouth, 0], points[mouth, 1], s=6, c="crimson", label="mouth")
    ax.set_xlim(0, 1)
    ax.set_ylim(1, 0)  # image coordinates: y grows downward
    ax.set_aspect("equal")
    ax.legend(loc="lower right", fontsize=7)
    fig.savefig(path, dpi=80, bbox_inches="tight")
    plt.close(fig)


def emit_landmark_plots(
    seq: LandmarkSequence, out_dir, part: LandmarkPartition | None = None
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(len(seq)):
        path = out / f"{t:05d}.png"
        plot_landmark_frame(seq.points[t], path, part)
        paths.append(path)
    return paths
