"""Frame-level audio features and audio/AU conditioning assembly.

The feature extractor is a provider interface so a pretrained speech model
can be swapped in behind the same contract; the default provider is a
deterministic, seedless windowed log-energy spectrum and needs no weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..errors import DataError, SchemaError, ShapeError
from ..facs import NUM_AUS, AUSequence

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class AudioFeatureSequence:
    """T x D frame-level audio features at a fixed frame rate."""

    frames: np.ndarray  # (T, D)
    fps: float

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"audio features need shape (T>=1, D>=1), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("audio features must be finite")
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def width(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class ConditioningSequence:
    """Per-frame [audio ; AU] concatenation, width D + 18."""

    frames: np.ndarray  # (T, D + 18)
    audio_width: int
    fps: float

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.audio_width + NUM_AUS:
            raise ShapeError(
                f"conditioning needs width {self.audio_width + NUM_AUS}, got shape {arr.shape}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def width(self) -> int:
        return self.frames.shape[1]

    def audio_part(self) -> np.ndarray:
        return self.frames[:, : self.audio_width]

    def au_part(self) -> np.ndarray:
        return self.frames[:, self.audio_width :]


class AudioFeatureProvider(Protocol):
    """Contract for waveform -> frame-level feature extractors.

    Implementations must be deterministic and produce exactly
    ceil(duration_seconds * fps) frames of fixed width.
    """

    @property
    def width(self) -> int: ...

    def extract(self, waveform: np.ndarray, fps: float) -> np.ndarray: ...


class SpectralEnergyProvider:
    """Deterministic default: per-frame log-energy in linear frequency bands.

    Each output frame pools the magnitude spectrum of one hop-length window
    of the 16 kHz waveform into ``width`` bands. No weights, no state.
    """

    def __init__(self, width: int = 8):
        if width < 1:
            raise DataError(f"feature width must be >= 1, got {width}")
        self._width = width

    @property
    def width(self) -> int:
        return self._width

    def extract(self, waveform: np.ndarray, fps: float) -> np.ndarray:
        waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
        num_frames = math.ceil(len(waveform) / SAMPLE_RATE * fps)
        hop = int(round(SAMPLE_RATE / fps))
        feats = np.empty((num_frames, self._width))
        for t in range(num_frames):
            chunk = waveform[t * hop : (t + 1) * hop]
            if chunk.size == 0:
                chunk = np.zeros(1)
            spectrum = np.abs(np.fft.rfft(chunk, n=hop)) ** 2
            bands = np.array_split(spectrum, self._width)
            feats[t] = [math.log(1e-8 + float(b.sum())) for b in bands]
        return feats


def audio_features(
    provider: AudioFeatureProvider, waveform: np.ndarray, fps: float
) -> AudioFeatureSequence:
    """Run a provider over a 16 kHz waveform; T = ceil(duration * fps)."""
    waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if waveform.size == 0:
        raise DataError("waveform is empty")
    if not fps > 0:
        raise DataError(f"fps must be positive, got {fps}")
    frames = provider.extract(waveform, fps)
    expected = math.ceil(waveform.size / SAMPLE_RATE * fps)
    if frames.shape != (expected, provider.width):
        raise ShapeError(
            f"provider returned shape {frames.shape}, expected ({expected}, {provider.width})"
        )
    return AudioFeatureSequence(frames, fps)


def build_conditioning(a: AudioFeatureSequence, u: AUSequence) -> ConditioningSequence:
    """Column-concatenate audio features and AU intensities, audio first."""
    if len(a) != len(u):
        raise ShapeError(f"frame counts differ: audio {len(a)} vs AU {len(u)}")
    if a.fps != u.fps:
        raise ShapeError(f"frame rates differ: audio {a.fps} vs AU {u.fps}")
    frames = np.concatenate([a.frames, u.frames], axis=1)
    return ConditioningSequence(frames, a.width, a.fps)


def write_audio_features_csv(seq: AudioFeatureSequence, path) -> None:
    """CSV layout: header 'fps,<v>,width,<D>', then one 64-bit row per frame."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"fps,{seq.fps!r},width,{seq.width}\n")
        for row in seq.frames:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_audio_features_csv(path) -> AudioFeatureSequence:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 4 or header[0] != "fps" or header[2] != "width":
            raise SchemaError(f"{path}: bad audio feature header")
        fps, width = float(header[1]), int(header[3])
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            values = [float(v) for v in line.strip().split(",")]
            if len(values) != width:
                raise SchemaError(f"{path}:{lineno}: expected {width} values")
            rows.append(values)
    if not rows:
        raise SchemaError(f"{path}: no feature rows")
    return AudioFeatureSequence(np.array(rows), fps)
