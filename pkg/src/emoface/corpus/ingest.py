"""Manifest-based ingestion of real clips.

Manifest format: line-delimited JSON records with fields `path` (clip directory
or media file, relative to the manifest), `emotion` (one of the six names,
case-insensitive) and `subject`. Per-record failures are collected into the
report rather than aborting the batch.
"""

from __future__ import annotations

import json
import shutil
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from ..emotions import EMOTIONS, EmotionError, EmotionLabel
from .records import ClipRecord, CorpusError
from .io import read_clip

_MEDIA_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv", ".webm", ".flv"}


@dataclass
class IngestReport:
    records: list[ClipRecord] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _decode_media(path: Path, fps: float, image_size: int) -> Path:
    """Decode a media container into the clip-directory layout via ffmpeg."""
    tool = shutil.which("ffmpeg")
    if tool is None:
        raise CorpusError(
            f"{path}: decoding media containers requires an ffmpeg binary on PATH; "
            "provide a clip directory (frames/ + audio.wav) instead"
        )
    out = Path(tempfile.mkdtemp(prefix="emoface_ingest_"))
    (out / "frames").mkdir()
    scale = f"scale={image_size}:{image_size}"
    subprocess.run(
        [tool, "-y", "-loglevel", "error", "-i", str(path),
         "-vf", f"fps={fps},{scale}", str(out / "frames" / "%06d.png")],
        check=True,
    )
    subprocess.run(
        [tool, "-y", "-loglevel", "error", "-i", str(path),
         "-ac", "1", "-ar", "16000", str(out / "audio.wav")],
        check=True,
    )
    return out


def ingest_manifest(manifest_path, fps: float = 25.0, image_size: int = 96) -> IngestReport:
    """Load every manifest record, validating emotion names and clip invariants."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    report = IngestReport()

    lines = [ln for ln in manifest_path.read_text().splitlines() if ln.strip()]
    if not lines:
        warnings.warn(f"manifest {manifest_path} is empty", stacklevel=2)
        return report

    for lineno, line in enumerate(lines, start=1):
        try:
            rec = json.loads(line)
            name = str(rec["emotion"]).strip().lower()
            if name not in EMOTIONS:
                raise EmotionError(
                    f"emotion {rec['emotion']!r} is not one of {', '.join(EMOTIONS)}"
                )
            emotion = EmotionLabel(name)
            path = base / rec["path"]
            if not path.exists():
                raise CorpusError(f"media path {path} does not exist")
            if path.is_file() and path.suffix.lower() in _MEDIA_SUFFIXES:
                clip_dir = _decode_media(path, fps, image_size)
            else:
                clip_dir = path
            clip = read_clip(clip_dir, emotion=emotion,
                             subject_id=str(rec.get("subject", path.stem)))
            report.records.append(clip)
        except (KeyError, ValueError, OSError, subprocess.CalledProcessError) as exc:
            report.errors.append({"line": lineno, "record": line, "error": str(exc)})

    return report
