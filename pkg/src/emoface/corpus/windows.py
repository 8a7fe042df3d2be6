"""Windowing and corpus splitting."""

from __future__ import annotations

import warnings

import numpy as np

from .melspec import MelParams, melspectrogram
from .records import ClipRecord, CorpusError, SampleWindow, WindowProvenance

DEFAULT_T = 5
MEL_FRAMES_PER_WINDOW = 16
MASK_MODES = ("half", "full")


def mask_frames(frames: np.ndarray, mask_mode: str) -> np.ndarray:
    """Zero out the masked region. full: whole frame; half: rows [H/2, H)."""
    if mask_mode not in MASK_MODES:
        raise CorpusError(f"mask_mode must be one of {MASK_MODES}, got {mask_mode!r}")
    masked = frames.copy()
    if mask_mode == "full":
        masked[:] = 0.0
    else:
        h = frames.shape[1]
        masked[:, h // 2:, :, :] = 0.0
    return masked


def sample_ref_start(rng: np.random.Generator, num_frames: int, start: int,
                     t: int = DEFAULT_T) -> int:
    """Uniformly random window start whose T frames are disjoint from [start, start+t)."""
    candidates = [r for r in range(0, num_frames - t + 1)
                  if r + t <= start or r >= start + t]
    if not candidates:
        raise CorpusError(
            f"clip with {num_frames} frames cannot supply a reference window disjoint "
            f"from [{start}, {start + t}); need at least 2*T frames"
        )
    return int(candidates[rng.integers(0, len(candidates))])


def mel_chunk_for_window(mel: np.ndarray, start: int, t: int, fps: float,
                         hop_s: float, chunk_len: int = MEL_FRAMES_PER_WINDOW) -> np.ndarray:
    """Slice of the clip's mel, chunk_len frames temporally centered on the video window."""
    total = mel.shape[0]
    if total < chunk_len:
        raise CorpusError(f"clip mel has {total} frames; need at least {chunk_len}")
    center_time = (start + t / 2.0) / fps
    center = int(round(center_time / hop_s))
    lo = int(np.clip(center - chunk_len // 2, 0, total - chunk_len))
    return mel[lo: lo + chunk_len]


def make_window(clip: ClipRecord, start_index: int, mask_mode: str = "full",
                rng: np.random.Generator | None = None, ref_start: int | None = None,
                t: int = DEFAULT_T, mel: np.ndarray | None = None,
                mel_params: MelParams = MelParams()) -> SampleWindow:
    """Assemble one training window from a clip.

    The reference window is drawn disjoint in time from the target window
    (pass `ref_start` to pin it, else `rng` drives the uniform policy).
    `mel` takes a precomputed clip spectrogram to avoid recomputation.
    """
    if start_index < 0 or start_index + t > clip.num_frames:
        raise CorpusError(
            f"window [{start_index}, {start_index + t}) out of range for clip "
            f"{clip.clip_id} with {clip.num_frames} frames"
        )
    if ref_start is None:
        if rng is None:
            raise CorpusError("either ref_start or rng must be provided")
        ref_start = sample_ref_start(rng, clip.num_frames, start_index, t)
    elif not (ref_start + t <= start_index or ref_start >= start_index + t):
        raise CorpusError("reference window must be disjoint from the target window")

    ground_truth = clip.frames_float(start_index, start_index + t)
    reference = clip.frames_float(ref_start, ref_start + t)
    masked = mask_frames(ground_truth, mask_mode)

    if mel is None:
        mel = melspectrogram(clip.audio, mel_params, sample_rate=clip.sample_rate)
    chunk = mel_chunk_for_window(mel, start_index, t, clip.fps, mel_params.hop_s)

    return SampleWindow(
        reference_frames=reference,
        masked_frames=masked,
        mel_chunk=chunk,
        emotion=clip.emotion,
        ground_truth=ground_truth,
        provenance=WindowProvenance(
            clip_id=clip.clip_id,
            start_index=start_index,
            ref_start=int(ref_start),
            mask_mode=mask_mode,
            seed=0,
        ),
    )


def split(clips: list[ClipRecord], train_fraction: float = 0.95,
          seed: int = 0) -> tuple[list[ClipRecord], list[ClipRecord]]:
    """Deterministic by-clip partition into (train, test); test side rounds down."""
    if not 0.0 < train_fraction < 1.0:
        raise CorpusError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if not clips:
        raise CorpusError("cannot split an empty corpus")
    order = sorted(range(len(clips)), key=lambda i: clips[i].clip_id)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(len(clips))
    n_test = int(np.floor(len(clips) * (1.0 - train_fraction) + 1e-9))
    if n_test == 0:
        warnings.warn(f"test fraction of {len(clips)} clips rounds down to 0", stacklevel=2)
    test_idx = {order[p] for p in perm[:n_test]}
    train = [clips[i] for i in range(len(clips)) if i not in test_idx]
    test = [clips[i] for i in range(len(clips)) if i in test_idx]
    return train, test
