"""Evaluation metrics: lip-sync error, emotion accuracy, FID, embedding probes.

All metrics operate on in-memory frame arrays (L, H, W, 3) in [0, 1] plus the
driving audio, so generated and ground-truth material go through identical
code paths.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus.batching import frames_to_tensor
from .corpus.melspec import MelParams, melspectrogram
from .corpus.records import ClipRecord
from .corpus.windows import mel_chunk_for_window
from .discriminators import EmotionDiscriminator, SyncExpert
from .emotions import EMOTIONS, EmotionLabel
from .featurenet import FeatureNet

EIG_TOLERANCE = -1e-10
QUALIFICATION_BAR = 0.90


class MetricError(ValueError):
    pass


class QualificationError(RuntimeError):
    """Raised when the scoring classifier fails its accuracy bar on real data."""

    def __init__(self, accuracy: float, bar: float):
        super().__init__(
            f"emotion classifier qualification failed: accuracy {accuracy:.4f} "
            f"below required {bar:.2f}; refusing to score generated videos"
        )
        self.accuracy = accuracy
        self.bar = bar


# ---------------------------------------------------------------------------
# lip-sync error (LSE-D / LSE-C)
# ---------------------------------------------------------------------------


@dataclass
class SyncScore:
    lse_d: float
    lse_c: float
    offsets: list[int]
    mean_distances: list[float]
    # per (window, offset) distances; NaN marks pairs outside the clip
    distance_table: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "lse_d": self.lse_d,
            "lse_c": self.lse_c,
            "offsets": list(self.offsets),
            "mean_distances": [float(v) for v in self.mean_distances],
        }


def lse_from_table(offsets, mean_distances) -> tuple[float, float]:
    """Reduce an offset->mean-distance table to (LSE-D, LSE-C)."""
    dists = np.asarray(mean_distances, dtype=np.float64)
    if dists.size == 0:
        raise MetricError("empty distance table")
    d = float(dists.min())
    return d, float(np.median(dists) - d)


def lse(frames: np.ndarray, audio: np.ndarray, scorer: SyncExpert, fps: float,
        sample_rate: int = 16000, offset_range_s: float = 1.0,
        mel_params: MelParams = MelParams()) -> SyncScore:
    """Sliding-window sync distance between a video and its audio.

    Every length-T window of the video is embedded once; audio windows at all
    frame offsets within +-offset_range_s are embedded once; the table of
    Euclidean distances is averaged per offset over the windows for which the
    shifted audio window still lies inside the clip.
    """
    t = scorer.cfg.t
    n = frames.shape[0]
    if n < t:
        raise MetricError(f"video has {n} frames, need at least {t}")
    mel = melspectrogram(audio, mel_params, sample_rate)
    n_audio = int(audio.shape[0] / sample_rate * fps + 1e-9)
    max_off = int(round(offset_range_s * fps))

    starts = np.arange(0, n - t + 1)
    audio_hi = min(n, n_audio) - t
    if audio_hi < 0:
        raise MetricError("audio shorter than one sync window")
    if audio_hi < n - t:
        warnings.warn("audio shorter than the video; candidate offsets truncated "
                      "to the audio's extent")

    with torch.no_grad():
        video_emb = []
        for lo in range(0, len(starts), 32):
            batch = torch.stack([frames_to_tensor(frames[s: s + t]).reshape(-1, *frames.shape[1:3])
                                 for s in starts[lo: lo + 32]])
            video_emb.append(scorer.video_embed(batch))
        video_emb = torch.cat(video_emb).double().numpy()

        audio_starts = np.arange(0, audio_hi + 1)
        audio_emb = []
        for lo in range(0, len(audio_starts), 64):
            batch = torch.stack([
                torch.from_numpy(mel_chunk_for_window(mel, int(s), t, fps, mel_params.hop_s))
                for s in audio_starts[lo: lo + 64]]).unsqueeze(1)
            audio_emb.append(scorer.audio_embed(batch))
        audio_emb = torch.cat(audio_emb).double().numpy()

    offsets = list(range(-max_off, max_off + 1))
    table = np.full((len(starts), len(offsets)), np.nan)
    for wi, s in enumerate(starts):
        for oi, off in enumerate(offsets):
            a = s + off
            if 0 <= a <= audio_hi:
                table[wi, oi] = np.linalg.norm(video_emb[wi] - audio_emb[a])

    keep = ~np.all(np.isnan(table), axis=0)
    offsets = [o for o, k in zip(offsets, keep) if k]
    table = table[:, keep]
    mean_d = np.nanmean(table, axis=0)
    d, c = lse_from_table(offsets, mean_d)
    return SyncScore(lse_d=d, lse_c=c, offsets=offsets,
                     mean_distances=[float(v) for v in mean_d], distance_table=table)


# ---------------------------------------------------------------------------
# Frechet inception-style distance over feature-net embeddings
# ---------------------------------------------------------------------------


@dataclass
class FidScore:
    value: float
    n_a: int
    n_b: int
    regularized: bool = False

    def to_dict(self) -> dict:
        return {"value": self.value, "n_a": self.n_a, "n_b": self.n_b,
                "regularized": self.regularized}


def _fit_gaussian(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    n, dim = feats.shape
    mu = feats.mean(axis=0)
    if n < 2:
        raise MetricError("need at least two samples to fit a covariance")
    cov = np.cov(feats, rowvar=False).reshape(dim, dim)
    regularized = False
    if n <= dim:
        cov = cov + 1e-6 * np.eye(dim)
        regularized = True
    return mu, cov, regularized


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min() < EIG_TOLERANCE:
        raise MetricError(
            f"matrix square root: eigenvalue {vals.min():.3e} below tolerance "
            f"{EIG_TOLERANCE:.0e}; covariance product is not PSD"
        )
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def fid(features_a: np.ndarray, features_b: np.ndarray) -> FidScore:
    """Frechet distance between Gaussians fitted to two feature sets.

    ||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^{1/2}); the matrix square root
    uses an eigendecomposition of sqrt(Ca) Cb sqrt(Ca), which shares its
    spectrum with Ca Cb but is symmetric PSD.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise MetricError(f"feature sets must be 2-D with equal width, "
                          f"got {a.shape} and {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise MetricError("non-finite values in feature sets")
    mu_a, cov_a, reg_a = _fit_gaussian(a)
    mu_b, cov_b, reg_b = _fit_gaussian(b)

    # identical fitted Gaussians are at distance exactly zero; skip the
    # square root, whose rounding would otherwise leave ~1e-15 residue
    if np.array_equal(mu_a, mu_b) and np.array_equal(cov_a, cov_b):
        return FidScore(value=0.0, n_a=a.shape[0], n_b=b.shape[0],
                        regularized=reg_a or reg_b)

    root_a = _psd_sqrt(cov_a)
    cross = _psd_sqrt(root_a @ cov_b @ root_a)
    value = float(np.sum((mu_a - mu_b) ** 2)
                  + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return FidScore(value=max(value, 0.0), n_a=a.shape[0], n_b=b.shape[0],
                    regularized=reg_a or reg_b)


def frame_features(feature_net: FeatureNet, frames: np.ndarray,
                   batch_size: int = 64) -> np.ndarray:
    """Penultimate-stage pooled features for a stack of frames (L, H, W, 3)."""
    out = []
    with torch.no_grad():
        for lo in range(0, frames.shape[0], batch_size):
            batch = frames_to_tensor(frames[lo: lo + batch_size])
            out.append(feature_net.fid_features(batch).double().numpy())
    return np.concatenate(out)


def fid_report(real_by_label: dict[str, np.ndarray],
               fake_by_label: dict[str, np.ndarray]) -> dict:
    """Per-emotion FID plus the mean over emotions present in both sets."""
    per = {}
    for name in sorted(set(real_by_label) & set(fake_by_label)):
        per[name] = fid(real_by_label[name], fake_by_label[name]).to_dict()
    if not per:
        raise MetricError("no emotion present in both feature sets")
    mean = float(np.mean([v["value"] for v in per.values()]))
    return {"per_emotion": per, "mean": mean}


# ---------------------------------------------------------------------------
# emotion accuracy with a qualified external classifier
# ---------------------------------------------------------------------------


def video_probs(classifier: EmotionDiscriminator, frames: np.ndarray) -> np.ndarray:
    """Classifier probabilities for a full clip: mean over disjoint T-windows."""
    t = classifier.t
    n = frames.shape[0]
    if n < t:
        raise MetricError(f"video has {n} frames, need at least {t}")
    starts = list(range(0, n - t + 1, t))
    if starts[-1] + t < n:
        starts.append(n - t)
    with torch.no_grad():
        batch = torch.stack([frames_to_tensor(frames[s: s + t]) for s in starts])
        probs = classifier(batch)
    return probs.mean(dim=0).double().numpy()


def qualify_classifier(classifier: EmotionDiscriminator, clips: list[ClipRecord],
                       bar: float = QUALIFICATION_BAR) -> float:
    """Clip-level accuracy on real footage; raises if below the bar."""
    hits = 0
    for clip in clips:
        pred = int(np.argmax(video_probs(classifier, clip.frames_u8.astype(np.float32) / 255.0)))
        hits += int(pred == clip.emotion.index)
    acc = hits / len(clips)
    if acc < bar:
        raise QualificationError(acc, bar)
    return acc


@dataclass
class EmoAccReport:
    accuracy: float
    per_emotion: dict[str, float]
    support: dict[str, int]
    confusion: list[list[int]]
    classifier_qualification: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def emoacc(videos: list[np.ndarray], conditioned: list[EmotionLabel],
           classifier: EmotionDiscriminator, *, qualification: float | None = None,
           reference_clips: list[ClipRecord] | None = None) -> EmoAccReport:
    """Top-1 emotion accuracy of generated videos against their conditioning.

    The classifier must first prove itself on real footage: pass either its
    measured accuracy from qualify_classifier or the held-out clips to grade
    it on. Below the bar, scoring refuses to run.
    """
    if qualification is None:
        if reference_clips is None:
            raise MetricError("provide qualification accuracy or reference clips "
                              "to qualify the classifier")
        qualification = qualify_classifier(classifier, reference_clips)
    if qualification < QUALIFICATION_BAR:
        raise QualificationError(qualification, QUALIFICATION_BAR)
    if len(videos) != len(conditioned):
        raise MetricError("one conditioned label required per video")
    confusion = np.zeros((6, 6), dtype=np.int64)
    for frames, label in zip(videos, conditioned):
        pred = int(np.argmax(video_probs(classifier, frames)))
        confusion[label.index, pred] += 1

    support = confusion.sum(axis=1)
    per, weights = {}, {}
    for idx, name in enumerate(EMOTIONS):
        if support[idx] > 0:
            per[name] = float(confusion[idx, idx] / support[idx])
            weights[name] = int(support[idx])
    accuracy = float(confusion.trace() / confusion.sum())
    return EmoAccReport(
        accuracy=accuracy,
        per_emotion=per,
        support={k: weights[k] for k in per},
        confusion=confusion.tolist(),
        classifier_qualification=qualification,
    )


# ---------------------------------------------------------------------------
# emotion embeddings: export, 2-D projection, linear probe
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingDump:
    vectors: np.ndarray          # (n_videos, dim)
    labels: list[int]
    clip_ids: list[str]

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, vectors=self.vectors,
                 labels=np.asarray(self.labels, dtype=np.int64),
                 clip_ids=np.asarray(self.clip_ids))
        return path

    @staticmethod
    def load(path) -> "EmbeddingDump":
        raw = np.load(path, allow_pickle=False)
        return EmbeddingDump(vectors=raw["vectors"],
                             labels=[int(v) for v in raw["labels"]],
                             clip_ids=[str(v) for v in raw["clip_ids"]])


def video_embedding(disc: EmotionDiscriminator, frames: np.ndarray) -> np.ndarray:
    """Frame-averaged emotion code of a clip (trunk features before the RNN)."""
    t = disc.t
    n = frames.shape[0]
    if n < t:
        raise MetricError(f"video has {n} frames, need at least {t}")
    starts = list(range(0, n - t + 1, t))
    if starts[-1] + t < n:
        starts.append(n - t)
    codes = []
    with torch.no_grad():
        for s in starts:
            win = frames_to_tensor(frames[s: s + t]).unsqueeze(0)
            codes.append(disc.frame_codes(win)[0])          # (T, code_dim)
    # tail window overlaps the previous one; average over unique frames only
    seen: dict[int, torch.Tensor] = {}
    for s, code in zip(starts, codes):
        for i in range(t):
            seen.setdefault(s + i, code[i])
    stacked = torch.stack([seen[i] for i in sorted(seen)])
    return stacked.mean(dim=0).double().numpy()


def export_embeddings(disc: EmotionDiscriminator, videos: list[np.ndarray],
                      labels: list[EmotionLabel], clip_ids: list[str] | None = None) -> EmbeddingDump:
    if clip_ids is None:
        clip_ids = [f"video_{i:04d}" for i in range(len(videos))]
    if not (len(videos) == len(labels) == len(clip_ids)):
        raise MetricError("videos, labels and clip_ids must align")
    vectors = np.stack([video_embedding(disc, v) for v in videos])
    return EmbeddingDump(vectors=vectors, labels=[l.index for l in labels],
                         clip_ids=list(clip_ids))


def project_2d(dump: EmbeddingDump, seed: int = 0) -> np.ndarray:
    """Deterministic t-SNE projection to 2-D, one point per video."""
    from sklearn.manifold import TSNE

    n = dump.vectors.shape[0]
    if n < 3:
        raise MetricError("need at least three videos to project")
    perplexity = min(15.0, max(2.0, (n - 1) / 3.0))
    tsne = TSNE(n_components=2, random_state=seed, init="pca",
                perplexity=perplexity, max_iter=500)
    return tsne.fit_transform(dump.vectors.astype(np.float64))


def linear_probe_accuracy(train: EmbeddingDump, test: EmbeddingDump,
                          seed: int = 0) -> float:
    """Fit a linear classifier on train embeddings, score on test embeddings."""
    from sklearn.linear_model import LogisticRegression

    probe = LogisticRegression(max_iter=2000, random_state=seed)
    probe.fit(train.vectors, train.labels)
    return float(probe.score(test.vectors, test.labels))


# ---------------------------------------------------------------------------
# results table
# ---------------------------------------------------------------------------

TABLE_COLUMNS = (("lse_d", "LSE-D ↓"), ("lse_c", "LSE-C ↑"),
                 ("emoacc", "EmoAcc ↑"), ("fid", "FID ↓"))
ABSENT = "—"


def table_report(runs: list[dict]) -> dict:
    """Render per-preset metric rows; a missing metric stays absent, never 0.

    Each run dict carries "preset" plus any of lse_d / lse_c / emoacc / fid.
    Returns {"rows": [...], "text": str} where rows keep raw values (None for
    absent) and text is the aligned human-readable table.
    """
    rows = []
    for run in runs:
        if "preset" not in run:
            raise MetricError("each run needs a preset name")
        row = {"preset": run["preset"]}
        for key, _ in TABLE_COLUMNS:
            value = run.get(key)
            row[key] = None if value is None else float(value)
        rows.append(row)

    headers = ["Preset"] + [h for _, h in TABLE_COLUMNS]
    cells = [[row["preset"]] + [ABSENT if row[k] is None else f"{row[k]:.4f}"
                                for k, _ in TABLE_COLUMNS] for row in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in cells]
    return {"rows": rows, "text": "\n".join(lines)}


def write_metrics(path, payload: dict) -> Path:
    """Serialize a metrics payload deterministically (sorted keys, repr floats)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path
