"""FACS domain vocabulary: action units, AU vectors/sequences, landmarks.

All containers are immutable values (numpy arrays are frozen on construction)
and safe to share across workers. Operations here are pure functions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvariantError, SchemaError, ShapeError

# The 18 action units this pipeline models, in vector-index order. The first
# 17 carry graded intensities; AU28 (lip suck) is detected presence-only and
# is mapped onto the same 0..5 intensity scale as {0, 5}.
AU_IDS = (1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 28, 45)

AU_NAMES = {
    1: "inner brow raiser",
    2: "outer brow raiser",
    4: "brow lowerer",
    5: "upper lid raiser",
    6: "cheek raiser",
    7: "lid tightener",
    9: "nose wrinkler",
    10: "upper lip raiser",
    12: "lip corner puller",
    14: "dimpler",
    15: "lip corner depressor",
    17: "chin raiser",
    20: "lip stretcher",
    23: "lip tightener",
    25: "lips part",
    26: "jaw drop",
    28: "lip suck",
    45: "blink",
}

NUM_AUS = len(AU_IDS)
NUM_LANDMARKS = 162
AU_MAX_INTENSITY = 5.0

_AU_ORDINAL = {au: i for i, au in enumerate(AU_IDS)}


def canonical_au_catalogue() -> tuple[int, ...]:
    """The fixed, ordered 18-AU catalogue. Index i is the vector ordinal."""
    return AU_IDS


def au_ordinal(au_id: int) -> int:
    """Vector index of an AU id; raises DataError for ids outside the catalogue."""
    try:
        return _AU_ORDINAL[au_id]
    except KeyError:
        raise DataError(f"AU{au_id} is not in the 18-AU catalogue") from None


class EmotionLabel(enum.Enum):
    ANGRY = "angry"
    DISGUST = "disgust"
    FEAR = "fear"
    HAPPY = "happy"
    SAD = "sad"
    SURPRISED = "surprised"
    CONTEMPT = "contempt"
    NEUTRAL = "neutral"

    @classmethod
    def parse(cls, name: str) -> "EmotionLabel":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise DataError(f"unknown emotion label {name!r}; expected one of: {valid}") from None


# Canonical emotion -> AU-combination map. Neutral activates nothing.
EMOTION_AU_MAP = {
    EmotionLabel.ANGRY: frozenset({4, 7, 10, 23}),
    EmotionLabel.DISGUST: frozenset({7, 14, 17}),
    EmotionLabel.FEAR: frozenset({2, 4, 5, 7, 26}),
    EmotionLabel.HAPPY: frozenset({6, 12}),
    EmotionLabel.SAD: frozenset({4, 7, 15}),
    EmotionLabel.SURPRISED: frozenset({1, 2, 5, 26}),
    EmotionLabel.CONTEMPT: frozenset({12, 14}),
    EmotionLabel.NEUTRAL: frozenset(),
}


def emotion_to_aus(label: EmotionLabel | str) -> frozenset[int]:
    """AU ids canonically activated by an emotion label."""
    if isinstance(label, str):
        label = EmotionLabel.parse(label)
    return EMOTION_AU_MAP[label]


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AUVector:
    """Length-18 vector of FACS intensities, each in [0, 5]."""

    intensities: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float64)
        if arr.shape != (NUM_AUS,):
            raise ShapeError(f"AUVector needs shape ({NUM_AUS},), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("AUVector entries must be finite")
        if arr.min() < 0.0 or arr.max() > AU_MAX_INTENSITY:
            raise DataError(
                f"AU intensities must lie in [0, {AU_MAX_INTENSITY}]; "
                f"got range [{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "intensities", _frozen(arr))

    @classmethod
    def zeros(cls) -> "AUVector":
        return cls(np.zeros(NUM_AUS))

    def value(self, au_id: int) -> float:
        return float(self.intensities[au_ordinal(au_id)])


def emotion_to_au_vector(label: EmotionLabel | str, intensity: float) -> AUVector:
    """Constant AU vector with ``intensity`` on the emotion's canonical AUs."""
    if not (0.0 <= intensity <= AU_MAX_INTENSITY):
        raise DataError(f"intensity must lie in [0, {AU_MAX_INTENSITY}], got {intensity}")
    vec = np.zeros(NUM_AUS)
    for au in emotion_to_aus(label):
        vec[au_ordinal(au)] = intensity
    return AUVector(vec)


@dataclass(frozen=True)
class AUSequence:
    """T x 18 per-frame AU intensities at a fixed frame rate."""

    frames: np.ndarray  # (T, 18)
    fps: float

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != NUM_AUS:
            raise ShapeError(f"AUSequence needs shape (T, {NUM_AUS}), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ShapeError("AUSequence needs at least one frame")
        if not np.all(np.isfinite(arr)):
            raise DataError("AUSequence entries must be finite")
        if arr.min() < 0.0 or arr.max() > AU_MAX_INTENSITY:
            raise DataError(f"AU intensities must lie in [0, {AU_MAX_INTENSITY}]")
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "frames", _frozen(arr))

    def __len__(self) -> int:
        return self.frames.shape[0]

    def frame(self, i: int) -> AUVector:
        return AUVector(self.frames[i])

    @classmethod
    def constant(cls, vec: AUVector, num_frames: int, fps: float) -> "AUSequence":
        return cls(np.tile(vec.intensities, (num_frames, 1)), fps)


@dataclass(frozen=True)
class LandmarkFrame:
    """162 facial keypoints in normalized [0,1]^2 image coordinates.

    Only finiteness is enforced; generated frames may drift slightly outside
    the unit square and are clipped at rasterization time.
    """

    points: np.ndarray  # (162, 2)

    def __post_init__(self):
        arr = np.asarray(self.points, dtype=np.float64)
        if arr.shape != (NUM_LANDMARKS, 2):
            raise ShapeError(f"LandmarkFrame needs shape ({NUM_LANDMARKS}, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("landmark coordinates must be finite")
        object.__setattr__(self, "points", _frozen(arr))


@dataclass(frozen=True)
class LandmarkSequence:
    """T x 162 x 2 landmark trajectories at a fixed frame rate."""

    points: np.ndarray  # (T, 162, 2)
    fps: float

    def __post_init__(self):
        arr = np.asarray(self.points, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1:] != (NUM_LANDMARKS, 2):
            raise ShapeError(
                f"LandmarkSequence needs shape (T, {NUM_LANDMARKS}, 2), got {arr.shape}"
            )
        if arr.shape[0] < 1:
            raise ShapeError("LandmarkSequence needs at least one frame")
        if not np.all(np.isfinite(arr)):
            raise DataError("landmark coordinates must be finite")
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "points", _frozen(arr))

    def __len__(self) -> int:
        return self.points.shape[0]

    def frame(self, i: int) -> LandmarkFrame:
        return LandmarkFrame(self.points[i])


# Documented default layout of the 162-point set. The upstream point ordering
# is configuration, not ground truth; this block structure is what the bundled
# synthetic rig emits and what the default partition file encodes.
LAYOUT_BLOCKS = {
    "contour": range(0, 40),
    "brows": range(40, 60),
    "eyes": range(60, 92),
    "nose": range(92, 122),
    "mouth": range(122, 162),
}


@dataclass(frozen=True)
class LandmarkPartition:
    """Disjoint mouth/face split of the 162 landmark indices."""

    mouth_indices: tuple[int, ...]
    face_indices: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        mouth = tuple(sorted(int(i) for i in self.mouth_indices))
        if len(mouth) == 0:
            raise InvariantError("mouth index set must be nonempty")
        if len(set(mouth)) != len(mouth):
            raise InvariantError("mouth index set contains duplicates")
        if mouth[0] < 0 or mouth[-1] >= NUM_LANDMARKS:
            raise InvariantError(f"mouth indices must lie in 0..{NUM_LANDMARKS - 1}")
        face = tuple(i for i in range(NUM_LANDMARKS) if i not in set(mouth))
        object.__setattr__(self, "mouth_indices", mouth)
        object.__setattr__(self, "face_indices", face)

    @classmethod
    def default(cls) -> "LandmarkPartition":
        return cls(tuple(LAYOUT_BLOCKS["mouth"]))

    @classmethod
    def from_index_file(cls, path) -> "LandmarkPartition":
        """Read mouth indices from a text file: one integer per line, # comments."""
        indices = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                try:
                    indices.append(int(text))
                except ValueError:
                    raise SchemaError(f"{path}:{lineno}: expected an integer index, got {text!r}")
        return cls(tuple(indices))


def split_landmarks(
    seq: LandmarkSequence, part: LandmarkPartition
) -> tuple[np.ndarray, np.ndarray]:
    """Split a sequence into (mouth, face) point arrays.

    Returns (T, n_mouth, 2) and (T, n_face, 2) views with values unchanged;
    merging them back by index reproduces the input exactly.
    """
    mouth = seq.points[:, list(part.mouth_indices), :]
    face = seq.points[:, list(part.face_indices), :]
    return mouth, face


def merge_landmarks(
    mouth: np.ndarray, face: np.ndarray, part: LandmarkPartition, fps: float
) -> LandmarkSequence:
    """Inverse of split_landmarks."""
    mouth = np.asarray(mouth, dtype=np.float64)
    face = np.asarray(face, dtype=np.float64)
    if mouth.shape[0] != face.shape[0]:
        raise ShapeError("mouth and face sub-sequences must have equal frame counts")
    if mouth.shape[1] != len(part.mouth_indices) or face.shape[1] != len(part.face_indices):
        raise ShapeError("sub-sequence point counts do not match the partition")
    out = np.empty((mouth.shape[0], NUM_LANDMARKS, 2))
    out[:, list(part.mouth_indices), :] = mouth
    out[:, list(part.face_indices), :] = face
    return LandmarkSequence(out, fps)
