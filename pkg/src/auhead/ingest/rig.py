"""Synthetic "linear face rig" dataset generator.

Landmarks are an exact known linear function of the conditioning signals,
L_t = L0 + B_au @ u_t + B_aud @ a_t + noise, which makes the rig a
brute-force oracle for the motion generator: controllability and recovery
can be checked against the basis directly. Raster face frames are rendered
deterministically from the landmarks for training the video stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..checkpoint import config_hash
from ..errors import DataError, SchemaError, ShapeError
from ..facs import (
    AU_IDS,
    LAYOUT_BLOCKS,
    NUM_AUS,
    NUM_LANDMARKS,
    AUSequence,
    LandmarkFrame,
    LandmarkSequence,
    au_ordinal,
)
from ..geometry import render_points
from .audio import AudioFeatureSequence, read_audio_features_csv, write_audio_features_csv
from .landmark_io import read_landmark_file, write_landmark_file
from .openface import read_openface_au_csv, write_openface_au_csv

# Rendering amplitude per landmark block; mouth brightest so lip motion
# dominates the pixels the sync metrics care about.
RENDER_AMPLITUDE = {
    "contour": 0.45,
    "brows": 0.8,
    "eyes": 0.95,
    "nose": 0.55,
    "mouth": 1.0,
}


@dataclass(frozen=True)
class RigSpec:
    """Fixed linear face rig: base landmarks plus AU and audio bases."""

    base_face: LandmarkFrame
    au_basis: np.ndarray  # (18, 162, 2)
    audio_basis: np.ndarray  # (D, 162, 2)
    noise_std: float
    seed: int

    def __post_init__(self):
        au_b = np.asarray(self.au_basis, dtype=np.float64)
        aud_b = np.asarray(self.audio_basis, dtype=np.float64)
        if au_b.shape != (NUM_AUS, NUM_LANDMARKS, 2):
            raise ShapeError(f"au_basis needs shape (18, 162, 2), got {au_b.shape}")
        if aud_b.ndim != 3 or aud_b.shape[1:] != (NUM_LANDMARKS, 2):
            raise ShapeError(f"audio_basis needs shape (D, 162, 2), got {aud_b.shape}")
        if self.noise_std < 0:
            raise DataError(f"noise_std must be >= 0, got {self.noise_std}")
        au_b = au_b.copy()
        aud_b = aud_b.copy()
        au_b.setflags(write=False)
        aud_b.setflags(write=False)
        object.__setattr__(self, "au_basis", au_b)
        object.__setattr__(self, "audio_basis", aud_b)

    @property
    def audio_width(self) -> int:
        return self.audio_basis.shape[0]


def _ellipse(center, rx, ry, n, t0=0.0):
    theta = t0 + 2 * np.pi * np.arange(n) / n
    return np.stack([center[0] + rx * np.cos(theta), center[1] + ry * np.sin(theta)], axis=1)


def _arc(center, rx, ry, n, a0, a1):
    theta = np.linspace(a0, a1, n)
    return np.stack([center[0] + rx * np.cos(theta), center[1] + ry * np.sin(theta)], axis=1)


def default_base_face() -> LandmarkFrame:
    """Stylized 162-point face matching the documented block layout."""
    pts = np.zeros((NUM_LANDMARKS, 2))
    pts[LAYOUT_BLOCKS["contour"]] = _ellipse((0.5, 0.5), 0.30, 0.38, 40)
    pts[list(LAYOUT_BLOCKS["brows"])[:10]] = _arc((0.38, 0.36), 0.09, 0.035, 10, np.pi, 2 * np.pi)
    pts[list(LAYOUT_BLOCKS["brows"])[10:]] = _arc((0.62, 0.36), 0.09, 0.035, 10, np.pi, 2 * np.pi)
    pts[list(LAYOUT_BLOCKS["eyes"])[:16]] = _ellipse((0.38, 0.44), 0.06, 0.03, 16)
    pts[list(LAYOUT_BLOCKS["eyes"])[16:]] = _ellipse((0.62, 0.44), 0.06, 0.03, 16)
    nose = LAYOUT_BLOCKS["nose"]
    pts[list(nose)[:15]] = np.stack(
        [np.linspace(0.48, 0.44, 15), np.linspace(0.46, 0.60, 15)], axis=1
    )
    pts[list(nose)[15:]] = np.stack(
        [np.linspace(0.52, 0.56, 15), np.linspace(0.46, 0.60, 15)], axis=1
    )
    pts[LAYOUT_BLOCKS["mouth"]] = _ellipse((0.5, 0.72), 0.11, 0.045, 40)
    return LandmarkFrame(pts)


# Mouth block geometry: with the ellipse parameterization above, index 0 is
# the right corner (max x) and index 20 the left corner (min x).
MOUTH_START = LAYOUT_BLOCKS["mouth"].start
MOUTH_CORNER_INDICES = (MOUTH_START, MOUTH_START + 20)


def _au_displacements(base: np.ndarray) -> np.ndarray:
    """Per-unit-intensity displacement field for each catalogue AU."""
    unit = 0.016  # coords per intensity unit; max 5 * unit = 0.08 stays in-frame
    basis = np.zeros((NUM_AUS, NUM_LANDMARKS, 2))
    blocks = {k: list(v) for k, v in LAYOUT_BLOCKS.items()}
    brows, eyes, nose, mouth = blocks["brows"], blocks["eyes"], blocks["nose"], blocks["mouth"]
    contour = blocks["contour"]
    mouth_center = base[mouth].mean(axis=0)
    chin = [i for i in contour if base[i, 1] > 0.78]

    def set_au(au_id, idx, vec):
        basis[au_ordinal(au_id), idx] += vec

    inner_brows = [i for i in brows if 0.42 < base[i, 0] < 0.58]
    outer_brows = [i for i in brows if i not in inner_brows]
    upper_lids = [i for i in eyes if base[i, 1] < 0.44]
    lower_mouth = [i for i in mouth if base[i, 1] > mouth_center[1]]
    upper_mouth = [i for i in mouth if base[i, 1] <= mouth_center[1]]
    corners = list(MOUTH_CORNER_INDICES)

    set_au(1, inner_brows, (0.0, -unit))
    set_au(2, outer_brows, (0.0, -unit))
    set_au(4, brows, (0.0, unit))
    set_au(5, upper_lids, (0.0, -unit))
    set_au(6, [i for i in contour if 0.55 < base[i, 1] < 0.75], (0.0, -0.5 * unit))
    # AU7: tighten eyelids toward each eye's own vertical center.
    for i in eyes:
        eye_cy = 0.44
        set_au(7, [i], (0.0, 0.6 * unit * np.sign(eye_cy - base[i, 1])))
    set_au(9, nose, (0.0, -0.7 * unit))
    set_au(10, upper_mouth, (0.0, -unit))
    set_au(12, corners, np.array([[unit, -unit], [-unit, -unit]]))
    set_au(14, corners, np.array([[0.8 * unit, 0.0], [-0.8 * unit, 0.0]]))
    set_au(15, corners, (0.0, unit))
    set_au(17, chin, (0.0, -0.8 * unit))
    # AU20/23: stretch / tighten the whole mouth horizontally.
    for i in mouth:
        direction = np.sign(base[i, 0] - mouth_center[0])
        basis[au_ordinal(20), i, 0] = unit * direction
        basis[au_ordinal(23), i, 0] = -0.7 * unit * direction
    set_au(25, lower_mouth, (0.0, 0.6 * unit))
    set_au(26, lower_mouth, (0.0, 1.2 * unit))
    set_au(26, chin, (0.0, 1.2 * unit))
    # AU28: suck lips toward the mouth center.
    for i in mouth:
        basis[au_ordinal(28), i] = 0.5 * unit * (mouth_center - base[i])
    set_au(45, upper_lids, (0.0, 1.2 * unit))
    return basis


def _audio_displacements(rng: np.random.Generator, width: int, base: np.ndarray) -> np.ndarray:
    """Random but fixed audio-feature displacement field, mouth-dominant."""
    basis = rng.normal(0.0, 0.0012, size=(width, NUM_LANDMARKS, 2))
    mouth = list(LAYOUT_BLOCKS["mouth"])
    basis[:, mouth, :] = rng.normal(0.0, 0.009, size=(width, len(mouth), 2))
    return basis


def default_rig_spec(audio_width: int = 8, noise_std: float = 0.005, seed: int = 0) -> RigSpec:
    base = default_base_face()
    rng = np.random.default_rng(seed)
    return RigSpec(
        base_face=base,
        au_basis=_au_displacements(base.points),
        audio_basis=_audio_displacements(rng, audio_width, base.points),
        noise_std=noise_std,
        seed=seed,
    )


def rig_landmarks(spec: RigSpec, aus: np.ndarray, audio: np.ndarray) -> np.ndarray:
    """Noiseless rig formula: L_t = L0 + B_au . u_t + B_aud . a_t."""
    aus = np.asarray(aus, dtype=np.float64)
    audio = np.asarray(audio, dtype=np.float64)
    return (
        spec.base_face.points[None]
        + np.einsum("tk,kpc->tpc", aus, spec.au_basis)
        + np.einsum("td,dpc->tpc", audio, spec.audio_basis)
    )


def render_face(landmarks: np.ndarray, image_size: int, background: float = 0.15) -> np.ndarray:
    """Deterministic flat-shaded grayscale render of one landmark frame."""
    img = np.full((image_size, image_size), background)
    for block, amp in RENDER_AMPLITUDE.items():
        grid = render_points(landmarks[list(LAYOUT_BLOCKS[block])], image_size)
        img += amp * grid
    return np.clip(img, 0.0, 1.0)


def _smooth_curves(rng, num, length, fps, components=3, max_hz=2.0):
    """Sum-of-sinusoids curves normalized to [-1, 1], shape (length, num)."""
    t = np.arange(length) / fps
    coef = rng.uniform(0.3, 1.0, size=(num, components))
    freq = rng.uniform(0.2, max_hz, size=(num, components))
    phase = rng.uniform(0, 2 * np.pi, size=(num, components))
    raw = np.einsum("nc,cnt->nt", coef, np.sin(2 * np.pi * freq.T[:, :, None] * t + phase.T[:, :, None]))
    return (raw / np.abs(coef).sum(axis=1, keepdims=True)).T


@dataclass(frozen=True)
class RigClip:
    name: str
    split: str  # "train" | "val"
    audio: AudioFeatureSequence
    aus: AUSequence
    landmarks: LandmarkSequence
    frames: np.ndarray  # (T, H, W) float32 in [0, 1]

    def __post_init__(self):
        t = len(self.landmarks)
        if not (len(self.audio) == len(self.aus) == t == self.frames.shape[0]):
            raise ShapeError(
                f"clip {self.name}: modality frame counts differ "
                f"({len(self.audio)}, {len(self.aus)}, {t}, {self.frames.shape[0]})"
            )


@dataclass(frozen=True)
class ToyDataset:
    clips: tuple[RigClip, ...]
    spec_seed: int
    image_size: int

    def train_clips(self) -> list[RigClip]:
        return [c for c in self.clips if c.split == "train"]

    def val_clips(self) -> list[RigClip]:
        return [c for c in self.clips if c.split == "val"]


def synth_rig_generate(
    spec: RigSpec,
    num_clips: int,
    frames_per_clip: int,
    audio_width: int | None = None,
    fps: float = 25.0,
    image_size: int = 64,
    train_fraction: float = 0.9,
) -> ToyDataset:
    """Generate a toy dataset from the rig. Deterministic given spec.seed."""
    if num_clips < 1:
        raise DataError(f"num_clips must be >= 1, got {num_clips}")
    if frames_per_clip < 2:
        raise DataError(f"frames_per_clip must be >= 2, got {frames_per_clip}")
    if audio_width is None:
        audio_width = spec.audio_width
    if audio_width != spec.audio_width:
        raise ShapeError(
            f"audio_width {audio_width} does not match rig audio basis D={spec.audio_width}"
        )

    rng = np.random.default_rng(spec.seed)
    num_train = max(1, int(round(num_clips * train_fraction))) if num_clips > 1 else 1
    clips = []
    for k in range(num_clips):
        au_curves = _smooth_curves(rng, NUM_AUS, frames_per_clip, fps)
        aus = 2.5 * (1.0 + au_curves)
        # AU28 is presence-only upstream: binarize a slow curve onto {0, 5}.
        au28 = au_ordinal(28)
        slow = _smooth_curves(rng, 1, frames_per_clip, fps, max_hz=0.4)[:, 0]
        aus[:, au28] = np.where(slow >= 0.0, 5.0, 0.0)
        audio = _smooth_curves(rng, audio_width, frames_per_clip, fps, max_hz=4.0)

        landmarks = rig_landmarks(spec, aus, audio)
        if spec.noise_std > 0:
            landmarks = landmarks + rng.normal(0.0, spec.noise_std, size=landmarks.shape)

        background = rng.uniform(0.08, 0.25)
        frames = np.stack(
            [render_face(landmarks[t], image_size, background) for t in range(frames_per_clip)]
        ).astype(np.float32)

        clips.append(
            RigClip(
                name=f"clip_{k:03d}",
                split="train" if k < num_train else "val",
                audio=AudioFeatureSequence(audio, fps),
                aus=AUSequence(aus, fps),
                landmarks=LandmarkSequence(landmarks, fps),
                frames=frames,
            )
        )
    return ToyDataset(tuple(clips), spec.seed, image_size)


def save_image(img: np.ndarray, path) -> None:
    """Store a [0,1] grayscale frame as lossless 16-bit PNG."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 65535.0).round().astype(np.uint16)).save(path)


def load_image(path) -> np.ndarray:
    img = np.asarray(Image.open(path))
    if img.dtype == np.uint16:
        return img.astype(np.float64) / 65535.0
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    raise SchemaError(f"{path}: unsupported image dtype {img.dtype}")


def save_dataset(ds: ToyDataset, out_dir) -> Path:
    """Write the on-disk clip layout plus a reproducible manifest."""
    out = Path(out_dir)
    manifest = {
        "format": 1,
        "spec_seed": ds.spec_seed,
        "image_size": ds.image_size,
        "clips": [],
    }
    for clip in ds.clips:
        clip_dir = out / clip.split / clip.name
        (clip_dir / "frames").mkdir(parents=True, exist_ok=True)
        write_openface_au_csv(clip.aus, clip_dir / "au.csv")
        write_landmark_file(clip.landmarks, clip_dir / "landmarks.csv")
        write_audio_features_csv(clip.audio, clip_dir / "audio.csv")
        for t in range(clip.frames.shape[0]):
            save_image(clip.frames[t], clip_dir / "frames" / f"{t:05d}.png")
        manifest["clips"].append(
            {"name": clip.name, "split": clip.split, "frames": int(clip.frames.shape[0])}
        )
    manifest["manifest_hash"] = config_hash(manifest)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return out / "manifest.json"


def load_dataset(data_dir) -> ToyDataset:
    data = Path(data_dir)
    manifest_path = data / "manifest.json"
    if not manifest_path.exists():
        raise SchemaError(f"{data}: missing manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)

    clips = []
    for entry in manifest["clips"]:
        clip_dir = data / entry["split"] / entry["name"]
        aus = read_openface_au_csv(clip_dir / "au.csv")
        landmarks = read_landmark_file(clip_dir / "landmarks.csv")
        audio = read_audio_features_csv(clip_dir / "audio.csv")
        frame_paths = sorted((clip_dir / "frames").glob("*.png"))
        if len(frame_paths) != entry["frames"]:
            raise SchemaError(
                f"{clip_dir}: manifest says {entry['frames']} frames, found {len(frame_paths)}"
            )
        frames = np.stack([load_image(p) for p in frame_paths]).astype(np.float32)
        aus = AUSequence(aus.frames, landmarks.fps)
        clips.append(
            RigClip(
                name=entry["name"],
                split=entry["split"],
                audio=audio,
                aus=aus,
                landmarks=landmarks,
                frames=frames,
            )
        )
    return ToyDataset(tuple(clips), manifest["spec_seed"], manifest["image_size"])
