"""Window-level photometric augmentation.

One AugmentationParams draw is shared by every frame of a window (reference,
masked and ground truth), keeping the window photometrically consistent.
Identity-valued sub-transforms are skipped outright so identity params are an
exact no-op.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .records import AugmentationParams, SampleWindow
from .windows import mask_frames

_IDENTITY_PERM = (0, 1, 2)
_NONIDENTITY_PERMS = [
    (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0),
]


@dataclass(frozen=True)
class AugmentationRanges:
    brightness: float = 0.2          # delta in [-b, b]
    contrast: tuple[float, float] = (0.8, 1.2)
    gamma: tuple[float, float] = (0.8, 1.2)
    rgb_shift: float = 0.05          # per-channel delta in [-r, r]
    noise_sigma_max: float = 0.02
    shuffle_prob: float = 0.2


def sample_augmentation(rng: np.random.Generator,
                        ranges: AugmentationRanges = AugmentationRanges()) -> AugmentationParams:
    perm = _IDENTITY_PERM
    if rng.uniform() < ranges.shuffle_prob:
        perm = _NONIDENTITY_PERMS[rng.integers(0, len(_NONIDENTITY_PERMS))]
    return AugmentationParams(
        brightness_delta=float(rng.uniform(-ranges.brightness, ranges.brightness)),
        contrast_factor=float(rng.uniform(*ranges.contrast)),
        gamma=float(rng.uniform(*ranges.gamma)),
        channel_permutation=perm,
        rgb_shift=tuple(float(v) for v in rng.uniform(-ranges.rgb_shift,
                                                      ranges.rgb_shift, size=3)),
        gaussian_noise_sigma=float(rng.uniform(0.0, ranges.noise_sigma_max)),
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def noise_field(params: AugmentationParams, shape: tuple[int, int, int]) -> np.ndarray:
    """The (H, W, 3) noise field implied by params.seed; identical for every frame."""
    rng = np.random.Generator(np.random.PCG64(params.seed))
    return rng.standard_normal(shape).astype(np.float32)


def apply_to_frames(frames: np.ndarray, params: AugmentationParams) -> np.ndarray:
    """Apply the transform to (T, H, W, 3) or (H, W, 3) float frames in [0, 1]."""
    x = frames.astype(np.float32, copy=True)
    if params.brightness_delta != 0.0:
        x = x + np.float32(params.brightness_delta)
    if params.contrast_factor != 1.0:
        x = np.float32(0.5) + (x - np.float32(0.5)) * np.float32(params.contrast_factor)
    if params.gamma != 1.0:
        x = np.clip(x, 0.0, 1.0) ** np.float32(params.gamma)
    if tuple(params.channel_permutation) != _IDENTITY_PERM:
        x = x[..., list(params.channel_permutation)]
    if any(v != 0.0 for v in params.rgb_shift):
        x = x + np.asarray(params.rgb_shift, dtype=np.float32)
    if params.gaussian_noise_sigma != 0.0:
        field = noise_field(params, x.shape[-3:]) * np.float32(params.gaussian_noise_sigma)
        x = x + field
    return np.clip(x, 0.0, 1.0)


def apply_augmentation(window: SampleWindow, params: AugmentationParams) -> SampleWindow:
    """Return a new window with the transform applied to all frame sets.

    The masked frames are re-masked after transforming, so the transform only
    touches their unmasked region; the mel chunk is untouched.
    """
    mode = window.provenance.mask_mode
    return SampleWindow(
        reference_frames=apply_to_frames(window.reference_frames, params),
        masked_frames=mask_frames(apply_to_frames(window.masked_frames, params), mode),
        mel_chunk=window.mel_chunk,
        emotion=window.emotion,
        ground_truth=apply_to_frames(window.ground_truth, params),
        provenance=replace(window.provenance, augmentation=params),
    )
