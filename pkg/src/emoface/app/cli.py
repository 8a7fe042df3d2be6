"""Command-line entry points for every pipeline stage."""

from __future__ import annotations

import dataclasses
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from .. import workflows
from ..checkpointing import CheckpointError, load_checkpoint, save_checkpoint
from ..corpus.io import CorpusError, read_corpus, write_corpus
from ..corpus.records import CorpusSpec
from ..corpus.synth import synth_generate
from ..corpus.windows import split
from ..discriminators import (SyncExpertConfig, SyncPretrainConfig,
                              TrainingFailure, pretrain_sync_expert)
from ..emotions import EMOTIONS, EmotionError, EmotionLabel
from ..evalsuite import (QualificationError, project_2d, table_report,
                         write_metrics)
from ..featurenet import FeatureNet, FeatureNetConfig, train_featurenet
from ..inference import (MediaError, load_emotion_disc, load_generator, load_media,
                         reconcile_durations, windowed_generate, write_video)
from ..netblocks import ConfigError, GeneratorConfig
from ..trainer import (PRESETS, BasePretrainConfig, EmotionPretrainConfig,
                       TrainConfig, TrainingAborted, pretrain_base,
                       pretrain_emotion_disc, train)
from .config import ConfigFileError, load_service_config

_KNOWN_ERRORS = (CorpusError, EmotionError, ConfigError, CheckpointError,
                 TrainingFailure, TrainingAborted, QualificationError, MediaError,
                 ConfigFileError, FileNotFoundError, ValueError, RuntimeError)


def _guard(fn):
    """Exit nonzero with a machine-readable error record on known failures."""
    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _KNOWN_ERRORS as exc:
            click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                       err=True)
            sys.exit(1)
    return wrapped


def _load_yaml(path) -> dict:
    if path is None:
        return {}
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigFileError(f"config file {path} must hold a mapping")
    return raw


@click.group()
def main():
    """Emotion-conditioned talking-face pipeline."""


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--clips", default=60, show_default=True)
@click.option("--duration", default=2.0, show_default=True, help="clip length in seconds")
@click.option("--fps", default=25.0, show_default=True)
@click.option("--image-size", default=96, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--exact-balance", is_flag=True, help="equal clip count per emotion")
@_guard
def datagen(out, clips, duration, fps, image_size, seed, exact_balance):
    """Synthesize a labeled audiovisual corpus with known ground truth."""
    spec = CorpusSpec(n_clips=clips, clip_duration_s=duration, fps=fps,
                      image_size=image_size, seed=seed, exact_balance=exact_balance)
    records = synth_generate(spec)
    write_corpus(out, records)
    (Path(out) / "spec.json").write_text(
        json.dumps(dataclasses.asdict(spec), sort_keys=True, indent=2))
    click.echo(json.dumps({"corpus": str(out), "clips": len(records)}))


def _load_split(data, split_seed, train_fraction=0.95):
    clips = read_corpus(data)
    return split(clips, train_fraction=train_fraction, seed=split_seed)


def _generator_config(preset: str, image_size: int, slim: bool, extra: dict) -> dict:
    kwargs = dict(image_size=image_size)
    if slim:
        kwargs.update(workflows.slim_generator_kwargs())
    kwargs.update(extra)
    kwargs["concat_mode"] = "END" if preset == "END" else "SEQ"
    return kwargs


@main.command(name="train")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--preset", default="PL_DA", show_default=True,
              type=click.Choice(PRESETS, case_sensitive=False))
@click.option("--epochs", default=2, show_default=True)
@click.option("--steps", default=50, show_default=True, help="steps per epoch")
@click.option("--batch-size", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--split-seed", default=0, show_default=True)
@click.option("--train-fraction", default=0.95, show_default=True)
@click.option("--image-size", default=96, show_default=True)
@click.option("--slim", is_flag=True, help="reduced widths for CPU-only runs")
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="YAML with sections train/sync/emotion/featurenet/base/generator")
@_guard
def train_cmd(data, run_dir, preset, epochs, steps, batch_size, seed, split_seed,
              train_fraction, image_size, slim, config_path):
    """Run the full training pipeline: sync expert, pretrained pieces, main loop."""
    preset = preset.upper()
    sections = _load_yaml(config_path)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    train_clips, val_clips = _load_split(data, split_seed, train_fraction)
    (run_dir / "split.json").write_text(json.dumps({
        "split_seed": split_seed,
        "train": [c.clip_id for c in train_clips],
        "val": [c.clip_id for c in val_clips],
    }, sort_keys=True, indent=2))

    sync_kwargs = dict(workflows.slim_sync_kwargs()) if slim else {}
    sync_kwargs["image_size"] = image_size
    sync_cfg = SyncPretrainConfig(seed=seed, expert=SyncExpertConfig(**sync_kwargs),
                                  **sections.get("sync", {}))
    click.echo("pretraining sync expert...")
    expert, sync_hist = pretrain_sync_expert(train_clips, sync_cfg)
    save_checkpoint(run_dir / "sync_expert.pt", "sync_expert", sync_cfg.expert,
                    {"expert": expert}, extra={"history": sync_hist})

    gen_kwargs = _generator_config(preset, image_size, slim,
                                   sections.get("generator", {}))
    cfg = TrainConfig(preset=preset, epochs=epochs, steps_per_epoch=steps,
                      batch_size=batch_size, seed=seed,
                      generator=GeneratorConfig(**gen_kwargs),
                      **sections.get("train", {}))

    feature_net = None
    if cfg.use_perceptual:
        click.echo("training frozen feature net...")
        fn_kwargs = dict(sections.get("featurenet", {}))
        fn_kwargs.setdefault("image_size", image_size)
        fn_kwargs.setdefault("seed", seed + 1)
        feature_net, _ = train_featurenet(train_clips, FeatureNetConfig(**fn_kwargs))
        save_checkpoint(run_dir / "featurenet.pt", "featurenet", feature_net.cfg,
                        {"featurenet": feature_net})

    click.echo("pretraining emotion discriminator...")
    emo_kwargs = dict(sections.get("emotion", {}))
    emo_kwargs.setdefault("image_size", image_size)
    emo_cfg = EmotionPretrainConfig(seed=seed + 2, **emo_kwargs)
    disc_init, emo_hist = pretrain_emotion_disc(train_clips, val_clips, emo_cfg)
    save_checkpoint(run_dir / "emotion_disc_init.pt", "emotion_disc", emo_cfg,
                    {"emotion_disc": disc_init}, extra={"history": emo_hist})

    base_generator = None
    if cfg.use_base_pretrain:
        click.echo("base lip-sync pretraining...")
        base_kwargs = dict(sections.get("base", {}))
        base_cfg = BasePretrainConfig(
            seed=seed + 3, generator=GeneratorConfig(**gen_kwargs), **base_kwargs)
        base_generator, _ = pretrain_base(train_clips, base_cfg)

    click.echo(f"training preset {preset}...")
    result = train(train_clips, val_clips, cfg, expert, feature_net=feature_net,
                   emotion_disc_init=disc_init, base_generator=base_generator,
                   run_dir=run_dir)
    click.echo(json.dumps({"run_dir": str(result.run_dir),
                           "final_checkpoint": str(result.final_checkpoint),
                           "final_combined": result.report["final_combined"]}))


@main.command(name="eval")
@click.option("--run", "run_dir", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), help="metrics JSON (default <run>/metrics.json)")
@click.option("--split-seed", default=0, show_default=True)
@click.option("--train-fraction", default=0.95, show_default=True)
@click.option("--seed", default=900, show_default=True,
              help="seed for the independently trained scoring models")
@click.option("--slim", is_flag=True, help="reduced widths for the scoring models")
@_guard
def eval_cmd(run_dir, data, out, split_seed, train_fraction, seed, slim):
    """Score a finished run: LSE-D/C, EmoAcc, FID, embedding probe, table row."""
    run_dir = Path(run_dir)
    final = run_dir / "final.pt"
    if not final.exists():
        raise CheckpointError(f"run {run_dir} has no final.pt checkpoint; train first")
    generator, record = load_generator(final)
    disc, _ = load_emotion_disc(final)
    preset = record.get("extra", {}).get("preset", record["config"].get("preset", "?"))

    split_file = run_dir / "split.json"
    if split_file.exists():
        ids = json.loads(split_file.read_text())
        by_id = {c.clip_id: c for c in read_corpus(data)}
        train_clips = [by_id[i] for i in ids["train"]]
        val_clips = [by_id[i] for i in ids["val"]]
    else:
        train_clips, val_clips = _load_split(data, split_seed, train_fraction)

    image_size = record["config"]["image_size"]
    sync_kwargs = dict(workflows.slim_sync_kwargs()) if slim else {}
    sync_kwargs["image_size"] = image_size
    click.echo("training independent sync scorer...")
    scorer = workflows.train_scorer(
        train_clips, SyncPretrainConfig(seed=seed, expert=SyncExpertConfig(**sync_kwargs)))
    click.echo("training qualification classifier...")
    classifier, qualification, _ = workflows.train_eval_classifier(
        train_clips, val_clips,
        EmotionPretrainConfig(seed=seed + 1, epochs=30, accuracy_bar=0.90,
                              early_stop_acc=0.92, early_stop_metric="clip",
                              image_size=image_size))

    fn_path = run_dir / "featurenet.pt"
    if fn_path.exists():
        fn_record = load_checkpoint(fn_path, kind="featurenet")
        feature_net = FeatureNet(FeatureNetConfig(**fn_record["config"]))
        feature_net.load_state_dict(fn_record["modules"]["featurenet"])
        feature_net.freeze()
    else:
        click.echo("training feature net for FID...")
        feature_net, _ = train_featurenet(
            train_clips, FeatureNetConfig(image_size=image_size, seed=seed + 2))

    click.echo("generating and scoring test videos...")
    evaluation = workflows.evaluate_generator(generator, val_clips, scorer,
                                              classifier, qualification,
                                              feature_net=feature_net)
    probe = workflows.embedding_probe(disc, train_clips, val_clips, seed=seed)
    payload = {
        "preset": preset,
        "classifier_qualification": qualification,
        **{k: evaluation[k] for k in ("n_test_clips", "lse", "emoacc", "fid")},
        "embedding_probe": {k: probe[k] for k in
                            ("probe_accuracy", "n_train", "n_test", "labels")},
        "table": table_report([workflows.metrics_summary(evaluation, preset)]),
    }
    probe["test_dump"].save(run_dir / "embeddings.npz")
    (run_dir / "projection.json").write_text(json.dumps(
        {"coordinates": probe["coordinates"], "labels": probe["labels"]}, indent=2))
    out = Path(out) if out else run_dir / "metrics.json"
    write_metrics(out, payload)
    click.echo(payload["table"]["text"])
    click.echo(json.dumps({"metrics": str(out)}))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--video", required=True, type=click.Path(exists=True),
              help="container video or raw .npy/.npz frame stack")
@click.option("--audio", required=True, type=click.Path(exists=True),
              help=".wav or raw mono .npy waveform")
@click.option("--emotion", required=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--fps", type=float, default=None)
@click.option("--sample-rate", type=int, default=None)
@click.option("--duration-tolerance", default=0.5, show_default=True)
@_guard
def infer(checkpoint, video, audio, emotion, out, fps, sample_rate, duration_tolerance):
    """Generate a talking-face video for one (video, audio, emotion) triple."""
    label = EmotionLabel.from_name(emotion)
    generator, _ = load_generator(checkpoint)
    frames, waveform, fps, rate = load_media(video, audio, fps=fps,
                                             sample_rate=sample_rate)
    frames, waveform = reconcile_durations(frames, waveform, fps, rate,
                                           duration_tolerance)
    size = generator.cfg.image_size
    if frames.shape[1:3] != (size, size):
        import cv2
        frames = np.stack([cv2.resize(f, (size, size), interpolation=cv2.INTER_AREA)
                           for f in frames])
    generated = windowed_generate(generator, frames, waveform, rate, fps, label)
    path = write_video(out, generated, fps, waveform, rate)
    click.echo(json.dumps({"output": str(path), "frames": int(generated.shape[0]),
                           "fps": fps, "emotion": label.category}))


@main.command(name="export-embeddings")
@click.option("--checkpoint", required=True, type=click.Path(exists=True),
              help="run checkpoint holding the trained emotion discriminator")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--projection", type=click.Path(), help="also write 2-D t-SNE coordinates")
@click.option("--seed", default=0, show_default=True)
@_guard
def export_embeddings_cmd(checkpoint, data, out, projection, seed):
    """Dump frame-averaged per-video emotion embeddings (and a 2-D projection)."""
    from ..evalsuite import export_embeddings

    disc, _ = load_emotion_disc(checkpoint)
    clips = read_corpus(data)
    dump = export_embeddings(disc, [workflows.clip_frames(c) for c in clips],
                             [c.emotion for c in clips], [c.clip_id for c in clips])
    dump.save(out)
    record = {"embeddings": str(out), "videos": len(clips)}
    if projection:
        coords = project_2d(dump, seed=seed)
        Path(projection).write_text(json.dumps({
            "coordinates": coords.tolist(),
            "labels": [EMOTIONS[i] for i in dump.labels],
        }, indent=2))
        record["projection"] = str(projection)
    click.echo(json.dumps(record))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path())
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--workers", type=int, default=None)
@_guard
def serve(config_path, checkpoint, host, port, workers):
    """Start the HTTP inference service (config file < EMOFACE_* env < flags)."""
    from .service import serve as run_service

    cfg = load_service_config(config_path, overrides={
        "checkpoint": checkpoint, "host": host, "port": port, "workers": workers})
    if not cfg.checkpoint:
        raise ConfigFileError("no checkpoint configured; pass --checkpoint, set "
                              "EMOFACE_CHECKPOINT, or put it in the config file")
    run_service(cfg)


if __name__ == "__main__":
    main()
