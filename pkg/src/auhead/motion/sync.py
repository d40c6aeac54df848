"""Audio/landmark synchrony expert.

Two mirrored temporal-conv encoders map a W-frame landmark window and the
matching W-frame audio-feature window to a shared embedding space; cosine
similarity between the two embeddings is the synchrony score. The expert is
trained contrastively (aligned vs time-shifted windows) and then frozen
while the motion generator trains against it.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from ..errors import ShapeError
from ..facs import NUM_LANDMARKS
from .model import LANDMARK_WIDTH
from ..torchutils import to_tensor


class _WindowEncoder(nn.Module):
    """(B, W, C_in) -> (B, E) via temporal convs and mean pooling.

    Windows are centered over the time axis first (per-channel mean removed)
    and rescaled by ``gain``: synchrony lives in within-window motion, not in
    absolute pose, and landmark motion amplitudes are of order 1e-3.
    """

    def __init__(self, in_width: int, hidden: int, embed_width: int, gain: float = 1.0):
        super().__init__()
        self.gain = gain
        self.conv1 = nn.Conv1d(in_width, hidden, kernel_size=3, padding=1)
        self.conv2 = nn.Conv1d(hidden, hidden, kernel_size=3, padding=1)
        self.out = nn.Linear(hidden, embed_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = (x - x.mean(dim=1, keepdim=True)) * self.gain
        h = h.transpose(1, 2)
        h = torch.nn.functional.silu(self.conv1(h))
        h = torch.nn.functional.silu(self.conv2(h))
        return self.out(h.mean(dim=2))


class SyncExpert(nn.Module):
    def __init__(
        self,
        audio_width: int,
        window: int = 5,
        embed_width: int = 64,
        hidden: int = 64,
        landmark_gain: float = 100.0,
    ):
        super().__init__()
        self.audio_width = audio_width
        self.window = window
        self.embed_width = embed_width
        self.landmark_encoder = _WindowEncoder(LANDMARK_WIDTH, hidden, embed_width, landmark_gain)
        self.audio_encoder = _WindowEncoder(audio_width, hidden, embed_width)

    def embed_landmarks(self, windows: torch.Tensor) -> torch.Tensor:
        self._check(windows, LANDMARK_WIDTH, "landmark")
        return self.landmark_encoder(windows)

    def embed_audio(self, windows: torch.Tensor) -> torch.Tensor:
        self._check(windows, self.audio_width, "audio")
        return self.audio_encoder(windows)

    def _check(self, windows, width, name):
        if windows.ndim != 3 or windows.shape[1] != self.window or windows.shape[2] != width:
            raise ShapeError(
                f"{name} windows must be (B, {self.window}, {width}), got {tuple(windows.shape)}"
            )

    def config(self) -> dict:
        return {
            "audio_width": self.audio_width,
            "window": self.window,
            "embed_width": self.embed_width,
            "hidden": self.landmark_encoder.conv1.out_channels,
            "landmark_gain": self.landmark_encoder.gain,
        }


def build_sync_expert(config: dict, seed: int = 0) -> SyncExpert:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return SyncExpert(**config)


def cosine_similarity(a: torch.Tensor, b: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    an = a / (a.norm(dim=-1, keepdim=True) + eps)
    bn = b / (b.norm(dim=-1, keepdim=True) + eps)
    return (an * bn).sum(dim=-1)


def sliding_windows(frames: torch.Tensor, window: int) -> torch.Tensor:
    """All stride-1 windows of a (T, C) tensor -> (T - W + 1, W, C)."""
    if frames.shape[0] < window:
        raise ShapeError(f"sequence of {frames.shape[0]} frames shorter than window {window}")
    return frames.unfold(0, window, 1).permute(0, 2, 1)


def sync_embed(
    expert: SyncExpert,
    landmark_window: np.ndarray | None = None,
    audio_window: np.ndarray | None = None,
) -> np.ndarray:
    """Embed one W-frame window of either modality (exactly one given)."""
    if (landmark_window is None) == (audio_window is None):
        raise ShapeError("provide exactly one of landmark_window / audio_window")
    dtype = next(expert.parameters()).dtype
    with torch.no_grad():
        if landmark_window is not None:
            win = np.asarray(landmark_window, dtype=np.float64)
            if win.shape == (expert.window, NUM_LANDMARKS, 2):
                win = win.reshape(expert.window, LANDMARK_WIDTH)
            emb = expert.embed_landmarks(to_tensor(win, dtype)[None])
        else:
            win = np.asarray(audio_window, dtype=np.float64)
            emb = expert.embed_audio(to_tensor(win, dtype)[None])
    return emb[0].double().numpy()


def sync_scores(
    expert: SyncExpert, landmarks_flat: torch.Tensor, audio: torch.Tensor, shift: int = 0
) -> torch.Tensor:
    """Cosine score of every W-frame window pair, audio offset by ``shift`` frames."""
    w = expert.window
    if shift:
        if landmarks_flat.shape[0] <= shift + w:
            raise ShapeError(f"sequence too short for shift {shift}")
        landmarks_flat = landmarks_flat[: landmarks_flat.shape[0] - shift]
        audio = audio[shift:]
    lm = expert.embed_landmarks(sliding_windows(landmarks_flat, w))
    au = expert.embed_audio(sliding_windows(audio, w))
    return cosine_similarity(lm, au)
