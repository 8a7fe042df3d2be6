"""Checkpoint loading and windowed video generation (shared by eval + serving)."""

from __future__ import annotations

import shutil
import subprocess
from pathlib import Path

import numpy as np
import torch

from .checkpointing import load_checkpoint
from .corpus.batching import frames_to_tensor
from .corpus.io import write_wav
from .corpus.melspec import MelParams, melspectrogram
from .corpus.windows import mask_frames, mel_chunk_for_window
from .emotions import EmotionLabel
from .netblocks import Generator, GeneratorConfig


class MediaError(ValueError):
    pass


def generator_config_from_dict(d: dict) -> GeneratorConfig:
    d = dict(d)
    if "enc_channels" in d:
        d["enc_channels"] = tuple(d["enc_channels"])
    return GeneratorConfig(**d)


def load_generator(path) -> tuple[Generator, dict]:
    record = load_checkpoint(path, kind="train")
    gen = Generator(generator_config_from_dict(record["config"]))
    gen.load_state_dict(record["modules"]["generator"])
    gen.eval()
    return gen, record


def load_emotion_disc(path):
    """Rebuild the trained emotion discriminator stored in a run checkpoint."""
    from .discriminators import EmotionDiscriminator

    record = load_checkpoint(path, kind="train")
    cfg = record["config"]
    disc = EmotionDiscriminator(image_size=cfg["image_size"], t=cfg["t"])
    disc.load_state_dict(record["modules"]["emotion_disc"])
    disc.eval()
    return disc, record


def load_media(video_path, audio_path, fps: float | None = None,
               sample_rate: int | None = None, default_fps: float = 25.0,
               default_rate: int = 16000) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Decode a (video, audio) input pair.

    Video: a container decoded via OpenCV, or a raw .npy/.npz frame stack
    (L, H, W, 3) for dependency-free use. Audio: .wav, or raw mono .npy.
    """
    vpath = Path(video_path)
    if vpath.suffix in (".npy", ".npz"):
        raw = np.load(vpath, allow_pickle=False)
        frames = raw["frames"] if isinstance(raw, np.lib.npyio.NpzFile) else raw
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise MediaError(f"raw frames must be (L, H, W, 3), got {frames.shape}")
        if frames.dtype == np.uint8:
            frames = frames.astype(np.float32) / 255.0
        frames = np.clip(frames.astype(np.float32), 0.0, 1.0)
        fps = fps or default_fps
    else:
        frames, decoded_fps = read_video_frames(vpath)
        fps = fps or decoded_fps

    apath = Path(audio_path)
    if apath.suffix == ".npy":
        audio = np.load(apath, allow_pickle=False).astype(np.float32)
        if audio.ndim != 1:
            raise MediaError(f"raw audio must be 1-D mono, got shape {audio.shape}")
        rate = sample_rate or default_rate
    else:
        from .corpus.io import read_wav

        audio, decoded_rate = read_wav(apath)
        rate = sample_rate or decoded_rate
    return frames, audio, float(fps), int(rate)


def reconcile_durations(frames: np.ndarray, audio: np.ndarray, fps: float,
                        rate: int, tolerance_s: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Trim the longer stream's tail when durations differ within tolerance."""
    dv = frames.shape[0] / fps
    da = audio.shape[0] / rate
    if abs(dv - da) > tolerance_s:
        raise MediaError(
            f"video is {dv:.2f} s but audio is {da:.2f} s; difference exceeds the "
            f"{tolerance_s:.1f} s tolerance - trim your inputs to matching lengths"
        )
    if da > dv:
        audio = audio[: int(round(dv * rate))]
    elif dv > da:
        n = max(int(da * fps), 1)
        frames = frames[:n]
        audio = audio[: int(round(frames.shape[0] / fps * rate))]
    return frames, audio


def windowed_generate(gen: Generator, frames: np.ndarray, audio: np.ndarray,
                      sample_rate: int, fps: float, emotion: EmotionLabel,
                      mask_mode: str = "full", mel_params: MelParams = MelParams(),
                      batch_windows: int = 8) -> np.ndarray:
    """Generate a full clip window by window.

    `frames` (L, H, W, 3) float [0,1] drive pose/identity: each window's own
    frames serve as the reference and, masked, as the target input. Output has
    exactly L frames (the tail window is padded by repetition, then trimmed).
    """
    t = gen.cfg.t
    n = frames.shape[0]
    if n < 1:
        raise ValueError("need at least one input frame")
    mel = melspectrogram(audio, mel_params, sample_rate)
    onehot = torch.from_numpy(emotion.onehot).unsqueeze(0)

    starts = list(range(0, n - t + 1, t))
    tail = None
    covered = starts[-1] + t if starts else 0
    if covered < n:
        tail = n - t if n >= t else 0
        starts.append(tail)

    out = np.empty_like(frames)
    with torch.no_grad():
        for lo in range(0, len(starts), batch_windows):
            chunk = starts[lo: lo + batch_windows]
            refs, masks, mels = [], [], []
            for s in chunk:
                win = frames[s: s + t]
                if win.shape[0] < t:                      # clip shorter than one window
                    win = np.concatenate([win, np.repeat(win[-1:], t - win.shape[0], 0)])
                refs.append(frames_to_tensor(win))
                masks.append(frames_to_tensor(mask_frames(win, mask_mode)))
                mels.append(torch.from_numpy(
                    mel_chunk_for_window(mel, s, t, fps, mel_params.hop_s)))
            fake = gen(torch.stack(masks), torch.stack(refs), torch.stack(mels),
                       onehot.repeat(len(chunk), 1))
            fake = fake.permute(0, 1, 3, 4, 2).numpy()    # (B, T, H, W, 3)
            for s, f in zip(chunk, fake):
                out[s: min(s + t, n)] = f[: min(t, n - s)]
    return np.clip(out, 0.0, 1.0)


def write_video(path, frames: np.ndarray, fps: float, audio: np.ndarray | None = None,
                sample_rate: int | None = None) -> Path:
    """Write frames as an MJPG .avi; mux audio via ffmpeg when available,
    otherwise drop a sidecar wav next to the video."""
    import cv2

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if frames.dtype != np.uint8:
        frames = np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8)
    h, w = frames.shape[1:3]
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (w, h))
    try:
        for frame in frames:
            writer.write(cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
    finally:
        writer.release()

    if audio is not None and sample_rate is not None:
        wav = path.with_suffix(".wav")
        write_wav(wav, audio, sample_rate)
        ffmpeg = shutil.which("ffmpeg")
        if ffmpeg:
            muxed = path.with_name(path.stem + "_muxed.avi")
            ret = subprocess.run(
                [ffmpeg, "-y", "-loglevel", "error", "-i", str(path), "-i", str(wav),
                 "-c:v", "copy", "-c:a", "pcm_s16le", str(muxed)],
                capture_output=True,
            )
            if ret.returncode == 0:
                muxed.replace(path)
                wav.unlink(missing_ok=True)
    return path


def read_video_frames(path, image_size: int | None = None) -> tuple[np.ndarray, float]:
    """Decode a video into float [0,1] RGB frames via OpenCV."""
    import cv2

    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise ValueError(f"cannot open video {path}")
    fps = cap.get(cv2.CAP_PROP_FPS) or 25.0
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frame = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
        if image_size is not None and frame.shape[:2] != (image_size, image_size):
            frame = cv2.resize(frame, (image_size, image_size), interpolation=cv2.INTER_AREA)
        frames.append(frame.astype(np.float32) / 255.0)
    cap.release()
    if not frames:
        raise ValueError(f"no frames decoded from {path}")
    return np.stack(frames), float(fps)
