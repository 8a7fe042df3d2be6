"""On-disk corpus layout: per-clip frame directories + WAV audio + manifest.

Layout written by `write_corpus`:

    <root>/manifest.jsonl                 one {"path", "emotion", "subject"} per line
    <root>/clips/<clip_id>/clip.json      fps / sample_rate metadata
    <root>/clips/<clip_id>/frames/000000.png ...   lossless frame sequence
    <root>/clips/<clip_id>/audio.wav      uncompressed PCM16 mono
"""

from __future__ import annotations

import json
import wave
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from ..emotions import EmotionLabel
from .records import ClipRecord, CorpusError, WindowProvenance


def write_wav(path: Path, audio: np.ndarray, sample_rate: int):
    pcm = np.clip(np.rint(np.asarray(audio, dtype=np.float64) * 32767.0),
                  -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_wav(path: Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise CorpusError(f"{path}: expected mono audio")
        if w.getsampwidth() != 2:
            raise CorpusError(f"{path}: expected 16-bit PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    audio = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32767.0
    return audio, rate


def write_clip(clip_dir: Path, clip: ClipRecord):
    frames_dir = clip_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for i in range(clip.num_frames):
        Image.fromarray(clip.frames_u8[i]).save(frames_dir / f"{i:06d}.png")
    write_wav(clip_dir / "audio.wav", clip.audio, clip.sample_rate)
    meta = {"clip_id": clip.clip_id, "fps": clip.fps, "sample_rate": clip.sample_rate,
            "emotion": clip.emotion.category, "subject_id": clip.subject_id}
    (clip_dir / "clip.json").write_text(json.dumps(meta, sort_keys=True))


def read_clip(clip_dir: Path, emotion: EmotionLabel | None = None,
              subject_id: str | None = None) -> ClipRecord:
    clip_dir = Path(clip_dir)
    meta_path = clip_dir / "clip.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    frames_dir = clip_dir / "frames"
    frame_paths = sorted(frames_dir.glob("*.png"))
    if not frame_paths:
        raise CorpusError(f"{clip_dir}: no frames found")
    frames = np.stack([np.asarray(Image.open(p).convert("RGB")) for p in frame_paths])
    audio, rate = read_wav(clip_dir / "audio.wav")
    emotion = emotion or EmotionLabel.from_name(meta["emotion"])
    return ClipRecord(
        clip_id=meta.get("clip_id", clip_dir.name),
        frames_u8=frames.astype(np.uint8),
        fps=float(meta.get("fps", 25.0)),
        audio=audio,
        sample_rate=rate,
        emotion=emotion,
        subject_id=subject_id or meta.get("subject_id", clip_dir.name),
    )


def write_corpus(root: Path, clips: Iterable[ClipRecord]):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for clip in clips:
        rel = Path("clips") / clip.clip_id
        write_clip(root / rel, clip)
        lines.append(json.dumps({"path": str(rel), "emotion": clip.emotion.category,
                                 "subject": clip.subject_id}, sort_keys=True))
    (root / "manifest.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))


def read_corpus(root: Path) -> list[ClipRecord]:
    """Load every clip listed in a corpus directory's manifest.jsonl."""
    root = Path(root)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise CorpusError(f"no manifest.jsonl under {root}")
    clips = []
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if line:
            meta = json.loads(line)
            clips.append(read_clip(root / meta["path"]))
    return clips


def write_provenance(path: Path, records: Iterable[WindowProvenance], append: bool = False):
    """Line-delimited provenance sidecar for emitted windows."""
    mode = "a" if append else "w"
    with open(path, mode) as f:
        for rec in records:
            f.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def read_provenance(path: Path) -> list[dict]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
