"""Core data records for clips, training windows and corpus construction."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from ..emotions import EmotionLabel, EMOTIONS


class CorpusError(ValueError):
    """Validation failure in corpus construction or preprocessing."""


@dataclass
class ClipRecord:
    """One labeled audiovisual clip.

    Frames are stored as uint8 (L, H, W, 3) to keep large corpora in memory;
    `frames_float()` exposes the canonical [0, 1] float view that every
    downstream contract is stated against.
    """

    clip_id: str
    frames_u8: np.ndarray          # (L, H, W, 3) uint8
    fps: float
    audio: np.ndarray              # (S,) float32 mono in [-1, 1]
    sample_rate: int
    emotion: EmotionLabel
    subject_id: str

    def __post_init__(self):
        if self.frames_u8.ndim != 4 or self.frames_u8.shape[-1] != 3:
            raise CorpusError(f"frames must be (L, H, W, 3), got {self.frames_u8.shape}")
        if self.frames_u8.dtype != np.uint8:
            raise CorpusError("frames_u8 must be uint8")
        if self.audio.ndim != 1:
            raise CorpusError("audio must be mono (1-D)")
        video_dur = self.num_frames / self.fps
        audio_dur = self.audio.shape[0] / self.sample_rate
        if abs(video_dur - audio_dur) > 1.0 / self.fps + 1e-9:
            raise CorpusError(
                f"clip {self.clip_id}: audio duration {audio_dur:.3f}s deviates from video "
                f"duration {video_dur:.3f}s by more than one frame period"
            )

    @property
    def num_frames(self) -> int:
        return int(self.frames_u8.shape[0])

    @property
    def image_size(self) -> int:
        return int(self.frames_u8.shape[1])

    def frames_float(self, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
        """Frames [start, stop) as float32 in [0, 1]."""
        stop = self.num_frames if stop is None else stop
        return self.frames_u8[start:stop].astype(np.float32) / 255.0

    @staticmethod
    def quantize(frames_float: np.ndarray) -> np.ndarray:
        """Map float [0, 1] frames onto the uint8 storage grid."""
        return np.clip(np.rint(frames_float * 255.0), 0, 255).astype(np.uint8)


@dataclass
class AugmentationParams:
    """One photometric transform, applied identically to every frame of a window."""

    brightness_delta: float = 0.0
    contrast_factor: float = 1.0
    gamma: float = 1.0
    channel_permutation: tuple[int, int, int] = (0, 1, 2)
    rgb_shift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gaussian_noise_sigma: float = 0.0
    seed: int = 0

    @classmethod
    def identity(cls) -> "AugmentationParams":
        return cls()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationParams":
        d = dict(d)
        d["channel_permutation"] = tuple(d["channel_permutation"])
        d["rgb_shift"] = tuple(d["rgb_shift"])
        return cls(**d)


@dataclass
class WindowProvenance:
    clip_id: str
    start_index: int
    ref_start: int
    mask_mode: str
    seed: int
    augmentation: Optional[AugmentationParams] = None

    def to_dict(self) -> dict:
        d = {
            "clip_id": self.clip_id,
            "start_index": self.start_index,
            "ref_start": self.ref_start,
            "mask_mode": self.mask_mode,
            "seed": self.seed,
        }
        if self.augmentation is not None:
            d["augmentation"] = self.augmentation.to_dict()
        return d


@dataclass
class SampleWindow:
    """One training sample: T target frames plus reference/mask/mel/emotion context."""

    reference_frames: np.ndarray   # (T, H, W, 3) float32 in [0, 1]
    masked_frames: np.ndarray      # (T, H, W, 3) float32 in [0, 1]
    mel_chunk: np.ndarray          # (M, F) float32 log-mel
    emotion: EmotionLabel
    ground_truth: np.ndarray       # (T, H, W, 3) float32 in [0, 1]
    provenance: WindowProvenance

    @property
    def num_frames(self) -> int:
        return int(self.ground_truth.shape[0])


@dataclass
class CorpusSpec:
    """Parameters of the procedural synthetic corpus."""

    n_clips: int = 600
    clip_duration_s: float = 3.0
    fps: float = 25.0
    image_size: int = 96
    sample_rate: int = 16000
    # per-emotion sampling weights, aligned with EMOTIONS order
    emotion_distribution: tuple[float, ...] = field(default=(1.0,) * len(EMOTIONS))
    # allocate emotion counts proportionally (shuffled) instead of i.i.d. draws
    exact_balance: bool = True
    seed: int = 0
    # face geometry ranges, as fractions of image_size
    head_rx_range: tuple[float, float] = (0.30, 0.34)
    head_ry_range: tuple[float, float] = (0.40, 0.44)
    pose_jitter_px: float = 1.5
    max_aperture_frac: float = 0.09   # mouth half-height at full envelope

    def __post_init__(self):
        if self.n_clips <= 0:
            raise CorpusError("n_clips must be positive")
        if self.clip_duration_s <= 0:
            raise CorpusError("clip_duration_s must be positive")
        if self.fps <= 0 or self.sample_rate <= 0:
            raise CorpusError("fps and sample_rate must be positive")
        if self.image_size < 32:
            raise CorpusError("image_size must be at least 32")
        dist = np.asarray(self.emotion_distribution, dtype=np.float64)
        if dist.shape != (len(EMOTIONS),) or (dist < 0).any() or dist.sum() <= 0:
            raise CorpusError("emotion_distribution must be six non-negative weights")

    @property
    def frames_per_clip(self) -> int:
        return int(round(self.clip_duration_s * self.fps))

    @property
    def samples_per_frame(self) -> int:
        spf = self.sample_rate / self.fps
        if abs(spf - round(spf)) > 1e-9:
            raise CorpusError("sample_rate must be an integer multiple of fps")
        return int(round(spf))
