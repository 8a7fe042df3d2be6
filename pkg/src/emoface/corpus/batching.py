"""Bridge from corpus records to torch training batches."""

from __future__ import annotations

import numpy as np
import torch

from .augment import AugmentationRanges, apply_augmentation, sample_augmentation
from .melspec import MelParams, melspectrogram
from .records import ClipRecord, SampleWindow
from .windows import DEFAULT_T, make_window, sample_ref_start


def precompute_mels(clips, params: MelParams = MelParams()) -> dict:
    return {c.clip_id: melspectrogram(c.audio, params, c.sample_rate) for c in clips}


def frames_to_tensor(frames: np.ndarray) -> torch.Tensor:
    """(T, H, W, 3) float [0,1] -> (T, 3, H, W) torch."""
    return torch.from_numpy(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)))


def window_batch(windows: list[SampleWindow]) -> dict:
    """Stack SampleWindows into the generator's input tensors."""
    return {
        "masked": torch.stack([frames_to_tensor(w.masked_frames) for w in windows]),
        "reference": torch.stack([frames_to_tensor(w.reference_frames) for w in windows]),
        "ground_truth": torch.stack([frames_to_tensor(w.ground_truth) for w in windows]),
        "mel": torch.stack([torch.from_numpy(w.mel_chunk) for w in windows]),
        "onehot": torch.stack([torch.from_numpy(w.emotion.onehot) for w in windows]),
        "labels": torch.tensor([w.emotion.index for w in windows], dtype=torch.long),
    }


def draw_window(clip: ClipRecord, mel: np.ndarray, rng: np.random.Generator,
                mask_mode: str = "full", t: int = DEFAULT_T,
                augment: AugmentationRanges | None = None) -> SampleWindow:
    start = int(rng.integers(0, clip.num_frames - t + 1))
    w = make_window(clip, start, mask_mode, rng=rng, t=t, mel=mel)
    if augment is not None:
        w = apply_augmentation(w, sample_augmentation(rng, augment))
    return w


def training_batches(clips, mels: dict, rng: np.random.Generator, batch_size: int,
                     steps: int, mask_mode: str = "full", t: int = DEFAULT_T,
                     augment: AugmentationRanges | None = None):
    """Yield `steps` batches of randomly drawn (possibly augmented) windows."""
    for _ in range(steps):
        idx = rng.integers(0, len(clips), size=batch_size)
        windows = [draw_window(clips[i], mels[clips[i].clip_id], rng,
                               mask_mode, t, augment) for i in idx]
        yield window_batch(windows)


def emotion_batches(clips, rng: np.random.Generator, batch_size: int, steps: int,
                    t: int = DEFAULT_T):
    """Ground-truth frame windows + true labels, for classifier-style training."""
    for _ in range(steps):
        idx = rng.integers(0, len(clips), size=batch_size)
        frames, labels = [], []
        for i in idx:
            clip = clips[i]
            start = int(rng.integers(0, clip.num_frames - t + 1))
            frames.append(frames_to_tensor(clip.frames_float(start, start + t)))
            labels.append(clip.emotion.index)
        yield torch.stack(frames), torch.tensor(labels, dtype=torch.long)


# ----------------------------------------------------------- sync pretraining


def _offset_start(rng: np.random.Generator, num_frames: int, start: int,
                  t: int, min_offset: int) -> int:
    """A window start at least `min_offset` frames away from `start`."""
    candidates = [s for s in range(0, num_frames - t + 1) if abs(s - start) >= min_offset]
    if not candidates:
        raise ValueError(f"clip too short for offset >= {min_offset} frames")
    return int(rng.choice(candidates))


def sync_pair_batches(clips, cfg, rng: np.random.Generator):
    """Balanced matched/offset pairs for sync-expert pretraining.

    Yields (frames, mel, target) with target 1 for matched chunks and 0 for
    same-clip chunks offset by at least one window.
    """
    from .windows import mel_chunk_for_window

    t = cfg.expert.t
    mel_params = MelParams()
    mels = precompute_mels(clips, mel_params)
    items = []
    for clip in clips:
        mel = mels[clip.clip_id]
        for _ in range(cfg.windows_per_clip):
            start = int(rng.integers(0, clip.num_frames - t + 1))
            frames = frames_to_tensor(clip.frames_float(start, start + t))
            pos = mel_chunk_for_window(mel, start, t, clip.fps, mel_params.hop_s)
            off = _offset_start(rng, clip.num_frames, start, t, cfg.min_offset_frames)
            neg = mel_chunk_for_window(mel, off, t, clip.fps, mel_params.hop_s)
            items.append((frames, torch.from_numpy(pos), 1.0))
            items.append((frames, torch.from_numpy(neg), 0.0))
    order = rng.permutation(len(items))
    for lo in range(0, len(items) - cfg.batch_size + 1, cfg.batch_size):
        chunk = [items[i] for i in order[lo: lo + cfg.batch_size]]
        yield (torch.stack([c[0] for c in chunk]),
               torch.stack([c[1] for c in chunk]),
               torch.tensor([c[2] for c in chunk], dtype=torch.float32))


def sync_separation(expert, clips, cfg, windows_per_clip: int = 6, seed: int = 123) -> dict:
    """Held-out check: mean P_sync(matched) - mean P_sync(offset >= 0.4 s)."""
    from ..discriminators import sync_prob
    from .windows import mel_chunk_for_window

    t = cfg.expert.t
    mel_params = MelParams()
    rng = np.random.default_rng(seed)
    mels = precompute_mels(clips, mel_params)
    p_matched, p_offset = [], []
    with torch.no_grad():
        for clip in clips:
            mel = mels[clip.clip_id]
            sep_frames = max(int(np.ceil(cfg.separation_offset_s * clip.fps)), t)
            for _ in range(windows_per_clip):
                start = int(rng.integers(0, clip.num_frames - t + 1))
                frames = frames_to_tensor(clip.frames_float(start, start + t)).unsqueeze(0)
                pos = torch.from_numpy(
                    mel_chunk_for_window(mel, start, t, clip.fps, mel_params.hop_s)
                ).unsqueeze(0)
                off = _offset_start(rng, clip.num_frames, start, t, sep_frames)
                neg = torch.from_numpy(
                    mel_chunk_for_window(mel, off, t, clip.fps, mel_params.hop_s)
                ).unsqueeze(0)
                v, s = expert(frames, pos)
                p_matched.append(float(sync_prob(v, s)))
                v, s = expert(frames, neg)
                p_offset.append(float(sync_prob(v, s)))
    p_m, p_o = float(np.mean(p_matched)), float(np.mean(p_offset))
    return {"p_matched": p_m, "p_offset": p_o, "separation": p_m - p_o}
