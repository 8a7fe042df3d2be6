"""End-to-end orchestration shared by the CLI and the acceptance suite:
train the scoring models, generate evaluation videos, compute all metrics."""

from __future__ import annotations

import numpy as np
import torch

from . import evalsuite
from .corpus.melspec import MelParams
from .corpus.records import ClipRecord
from .discriminators import SyncExpert, SyncPretrainConfig, pretrain_sync_expert
from .emotions import EMOTIONS, EmotionLabel, NUM_EMOTIONS
from .featurenet import FeatureNet
from .inference import windowed_generate
from .netblocks import Generator
from .trainer import EmotionPretrainConfig, pretrain_emotion_disc


def clip_frames(clip: ClipRecord) -> np.ndarray:
    return clip.frames_u8.astype(np.float32) / 255.0


def slim_generator_kwargs() -> dict:
    """Reduced-width generator profile for CPU-only smoke runs. Preserves every
    architectural contract (stage count, skip wiring, fusion modes); only the
    channel widths shrink."""
    return dict(enc_channels=(16, 32, 64, 96), audio_embed_dim=96,
                emotion_embed_dim=32, pre_output_channels=24)


def slim_sync_kwargs() -> dict:
    return dict(embed_dim=128, stages=5, base_width=16)


def train_scorer(train_clips: list[ClipRecord], cfg: SyncPretrainConfig) -> SyncExpert:
    """Sync scorer for LSE; train it with a seed distinct from the training expert."""
    scorer, _ = pretrain_sync_expert(train_clips, cfg)
    return scorer


def train_eval_classifier(train_clips: list[ClipRecord], val_clips: list[ClipRecord],
                          cfg: EmotionPretrainConfig):
    """Qualification classifier: same architecture as the emotion discriminator,
    trained independently, graded at clip level on held-out real footage."""
    classifier, history = pretrain_emotion_disc(train_clips, val_clips, cfg)
    classifier.eval()
    qualification = evalsuite.qualify_classifier(classifier, val_clips)
    return classifier, qualification, history


def conditioning_labels(n: int, mode: str = "cycle") -> list[EmotionLabel]:
    """Arbitrary conditioned emotions for generation: a deterministic cycle over
    the six categories, so labels are balanced and unrelated to clip content."""
    if mode == "cycle":
        return [EmotionLabel.from_index(i % NUM_EMOTIONS) for i in range(n)]
    raise ValueError(f"unknown conditioning mode {mode!r}")


def generate_eval_videos(generator: Generator, clips: list[ClipRecord],
                         labels: list[EmotionLabel] | None = None,
                         mask_mode: str = "full") -> tuple[list[np.ndarray], list[EmotionLabel]]:
    if labels is None:
        labels = conditioning_labels(len(clips))
    generator.eval()
    videos = []
    for clip, label in zip(clips, labels):
        videos.append(windowed_generate(generator, clip_frames(clip), clip.audio,
                                        clip.sample_rate, clip.fps, label,
                                        mask_mode=mask_mode))
    return videos, labels


def _features_by_label(feature_net: FeatureNet, videos: list[np.ndarray],
                       labels: list[EmotionLabel]) -> dict[str, np.ndarray]:
    grouped: dict[str, list[np.ndarray]] = {}
    for frames, label in zip(videos, labels):
        grouped.setdefault(label.category, []).append(
            evalsuite.frame_features(feature_net, frames))
    return {k: np.concatenate(v) for k, v in grouped.items()}


def evaluate_generator(generator: Generator, test_clips: list[ClipRecord],
                       scorer: SyncExpert, classifier, qualification: float,
                       feature_net: FeatureNet | None = None,
                       mask_mode: str = "full",
                       mel_params: MelParams = MelParams()) -> dict:
    """Full metric sweep on one trained generator: LSE over generated videos with
    their driving audio, EmoAcc against arbitrary conditioned labels, and FID of
    generated frames against real frames (when a feature net is supplied)."""
    videos, cond = generate_eval_videos(generator, test_clips, mask_mode=mask_mode)

    per_clip = []
    for clip, frames in zip(test_clips, videos):
        score = evalsuite.lse(frames, clip.audio, scorer, fps=clip.fps,
                              sample_rate=clip.sample_rate, mel_params=mel_params)
        per_clip.append(score.to_dict())
    lse_d = float(np.mean([s["lse_d"] for s in per_clip]))
    lse_c = float(np.mean([s["lse_c"] for s in per_clip]))

    emo = evalsuite.emoacc(videos, cond, classifier, qualification=qualification)

    fid_block = None
    if feature_net is not None:
        real = _features_by_label(feature_net, [clip_frames(c) for c in test_clips],
                                  [c.emotion for c in test_clips])
        fake = _features_by_label(feature_net, videos, cond)
        fid_block = evalsuite.fid_report(real, fake)

    return {
        "n_test_clips": len(test_clips),
        "lse": {"lse_d": lse_d, "lse_c": lse_c, "per_clip": per_clip},
        "emoacc": emo.to_dict(),
        "fid": fid_block,
        "conditioning": [l.category for l in cond],
    }


def embedding_probe(disc, train_clips: list[ClipRecord], test_clips: list[ClipRecord],
                    seed: int = 0) -> dict:
    """Linear-probe check on frame-averaged emotion codes of real videos, plus a
    deterministic 2-D projection of the test-set embeddings (one point each)."""
    train_dump = evalsuite.export_embeddings(
        disc, [clip_frames(c) for c in train_clips], [c.emotion for c in train_clips],
        [c.clip_id for c in train_clips])
    test_dump = evalsuite.export_embeddings(
        disc, [clip_frames(c) for c in test_clips], [c.emotion for c in test_clips],
        [c.clip_id for c in test_clips])
    accuracy = evalsuite.linear_probe_accuracy(train_dump, test_dump, seed=seed)
    coords = evalsuite.project_2d(test_dump, seed=seed)
    return {
        "probe_accuracy": accuracy,
        "n_train": len(train_clips),
        "n_test": len(test_clips),
        "coordinates": coords.tolist(),
        "labels": [EMOTIONS[i] for i in test_dump.labels],
        "train_dump": train_dump,
        "test_dump": test_dump,
    }


def metrics_summary(evaluation: dict, preset: str) -> dict:
    """Flatten an evaluate_generator payload into one table_report row."""
    row = {"preset": preset,
           "lse_d": evaluation["lse"]["lse_d"],
           "lse_c": evaluation["lse"]["lse_c"],
           "emoacc": evaluation["emoacc"]["accuracy"]}
    row["fid"] = None if evaluation["fid"] is None else evaluation["fid"]["mean"]
    return row
