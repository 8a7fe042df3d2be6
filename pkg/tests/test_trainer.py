"""Trainer contracts: the alpha gate, preset semantics, pretraining stages,
the alternating main loop, checkpoint resume, and abort paths."""

import dataclasses
import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from emoface.checkpointing import load_checkpoint
from emoface.corpus import CorpusSpec, synth_generate
from emoface.discriminators import (EmotionDiscriminator, SyncExpert,
                                    SyncExpertConfig, TrainingFailure)
from emoface.losses import ALPHA_ACTIVE
from emoface.netblocks import Generator, GeneratorConfig
from emoface.trainer import (BasePretrainConfig, EmotionPretrainConfig, GateState,
                             PRESETS, TrainConfig, TrainingAborted,
                             apply_face_encoder, clip_accuracy, emotion_accuracy,
                             pretrain_base, pretrain_emotion_disc, train,
                             update_gate, validation_sync_loss)

torch.set_num_threads(1)

SLIM32 = dict(image_size=32, enc_channels=(8, 12, 16, 24), audio_embed_dim=32,
              emotion_embed_dim=16, pre_output_channels=12)


@pytest.fixture(scope="module")
def corpus32():
    return synth_generate(CorpusSpec(n_clips=12, clip_duration_s=1.2,
                                     image_size=32, seed=31))


@pytest.fixture(scope="module")
def frozen_expert32():
    expert = SyncExpert(SyncExpertConfig(image_size=32, embed_dim=32,
                                         stages=5, base_width=8))
    expert.freeze()
    return expert


def slim_train_config(preset, tmp_path=None, **overrides):
    kwargs = dict(preset=preset, epochs=1, steps_per_epoch=4, batch_size=2,
                  validation_every=2, val_windows=2, seed=5,
                  generator=GeneratorConfig(**SLIM32))
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------- alpha gate

def test_gate_starts_closed():
    gate = GateState()
    assert gate.alpha_current == 0.0
    assert not gate.latched
    assert gate.threshold == 0.75


def test_gate_opens_below_threshold():
    gate = update_gate(GateState(), 0.74)
    assert gate.latched
    assert gate.alpha_current == ALPHA_ACTIVE
    assert gate.last_val_sync == pytest.approx(0.74)


def test_gate_stays_closed_at_threshold():
    gate = update_gate(GateState(), 0.75)
    assert not gate.latched
    assert gate.alpha_current == 0.0


def test_gate_latches_permanently():
    gate = update_gate(GateState(), 0.5)
    gate = update_gate(gate, 5.0)  # validation got worse afterwards
    assert gate.latched
    assert gate.alpha_current == ALPHA_ACTIVE


def test_gate_roundtrips_through_dict():
    gate = update_gate(GateState(threshold=0.6), 0.55)
    clone = GateState.from_dict(gate.to_dict())
    assert clone == gate


@settings(deadline=None, max_examples=40)
@given(st.lists(st.floats(0.0, 2.0, allow_nan=False), min_size=1, max_size=24))
def test_gate_trajectory_is_a_latch(losses):
    gate = GateState()
    trajectory = []
    for v in losses:
        gate = update_gate(gate, v)
        trajectory.append(gate.alpha_current)
    crossings = [i for i, v in enumerate(losses) if v < gate.threshold]
    if crossings:
        first = crossings[0]
        assert all(a == 0.0 for a in trajectory[:first])
        assert all(a == ALPHA_ACTIVE for a in trajectory[first:])
    else:
        assert all(a == 0.0 for a in trajectory)


# ------------------------------------------------------------------- presets

def test_presets_tuple():
    assert PRESETS == ("END", "SEQ", "PL_DA", "PRE")


def test_preset_pins_concat_mode():
    assert TrainConfig(preset="END").generator.concat_mode == "END"
    for preset in ("SEQ", "PL_DA", "PRE"):
        assert TrainConfig(preset=preset).generator.concat_mode == "SEQ"


def test_preset_overrides_conflicting_generator_mode():
    cfg = TrainConfig(preset="END", generator=GeneratorConfig(concat_mode="SEQ"))
    assert cfg.generator.concat_mode == "END"


@pytest.mark.parametrize("preset,perc,aug,base", [
    ("END", False, False, False),
    ("SEQ", False, False, False),
    ("PL_DA", True, True, False),
    ("PRE", True, True, True),
])
def test_preset_feature_matrix(preset, perc, aug, base):
    cfg = TrainConfig(preset=preset)
    assert cfg.use_perceptual is perc
    assert cfg.use_augmentation is aug
    assert cfg.use_base_pretrain is base


def test_unknown_preset_rejected():
    with pytest.raises(ValueError, match="preset"):
        TrainConfig(preset="FULL")


def test_bad_face_encoder_policy_rejected():
    with pytest.raises(ValueError, match="face_encoder_policy"):
        TrainConfig(preset="PRE", face_encoder_policy="thawed")


# -------------------------------------------------------- emotion pretraining

def test_emotion_pretrain_failure_reports_metrics(corpus32):
    cfg = EmotionPretrainConfig(epochs=1, steps_per_epoch=2, batch_size=4,
                                lr=0.0, min_epochs=1, accuracy_bar=0.9,
                                image_size=32, seed=1)
    with pytest.raises(TrainingFailure, match="accuracy") as err:
        pretrain_emotion_disc(corpus32[:8], corpus32[8:], cfg)
    assert err.value.metrics["epochs_run"] == 1
    assert len(err.value.metrics["epoch_ce"]) == 1


def test_emotion_pretrain_early_stops_on_window_metric(corpus32):
    # a zero bar makes every epoch qualify: the loop must halt at min_epochs
    cfg = EmotionPretrainConfig(epochs=6, steps_per_epoch=2, batch_size=4,
                                min_epochs=2, accuracy_bar=0.0, early_stop_acc=0.0,
                                image_size=32, seed=2)
    disc, history = pretrain_emotion_disc(corpus32[:8], corpus32[8:], cfg)
    assert history["epochs_run"] == 2
    assert len(history["epoch_val_accuracy"]) == 2
    assert isinstance(disc, EmotionDiscriminator)


def test_emotion_pretrain_clip_metric_records_history(corpus32):
    cfg = EmotionPretrainConfig(epochs=3, steps_per_epoch=2, batch_size=4,
                                min_epochs=1, accuracy_bar=0.0, early_stop_acc=0.0,
                                early_stop_metric="clip", image_size=32, seed=3)
    disc, history = pretrain_emotion_disc(corpus32[:8], corpus32[8:], cfg)
    assert history["epochs_run"] == 1
    assert "clip_accuracy" in history
    assert len(history["epoch_clip_accuracy"]) == 1
    manual = clip_accuracy(disc.eval(), corpus32[8:])
    assert history["clip_accuracy"] == pytest.approx(manual)


def test_emotion_pretrain_rejects_unknown_metric(corpus32):
    cfg = EmotionPretrainConfig(early_stop_metric="frame")
    with pytest.raises(ValueError, match="early_stop_metric"):
        pretrain_emotion_disc(corpus32[:8], corpus32[8:], cfg)


def test_accuracy_helpers_bounded(corpus32):
    disc = EmotionDiscriminator(image_size=32).eval()
    acc = emotion_accuracy(disc, corpus32[8:], windows_per_clip=1)
    clip = clip_accuracy(disc, corpus32[8:])
    assert 0.0 <= acc <= 1.0
    assert 0.0 <= clip <= 1.0


# ----------------------------------------------------------- base pretraining

def test_base_pretrain_disables_emotion_conditioning():
    cfg = BasePretrainConfig(generator=GeneratorConfig(**SLIM32))
    assert cfg.generator.emotion_enabled is False


def test_base_pretrain_runs_and_reports(corpus32):
    cfg = BasePretrainConfig(epochs=1, steps_per_epoch=2, batch_size=2, seed=4,
                             generator=GeneratorConfig(**SLIM32))
    gen, history = pretrain_base(corpus32[:8], cfg)
    assert len(history) == 1
    assert math.isfinite(history[0])
    assert gen.emotion_encoder is None


def test_base_pretrain_half_face_loss(corpus32):
    cfg = BasePretrainConfig(epochs=1, steps_per_epoch=2, batch_size=2, seed=4,
                             whole_face=False, generator=GeneratorConfig(**SLIM32))
    _, history = pretrain_base(corpus32[:8], cfg)
    assert math.isfinite(history[0])


# --------------------------------------------------------- encoder transplant

def test_apply_face_encoder_init_keeps_params_trainable():
    base = Generator(GeneratorConfig(**SLIM32, emotion_enabled=False))
    target = Generator(GeneratorConfig(**SLIM32))
    apply_face_encoder(base, target, policy="init")
    for (name, src), (_, dst) in zip(base.face_encoder.state_dict().items(),
                                     target.face_encoder.state_dict().items()):
        assert torch.equal(src, dst), name
    assert all(p.requires_grad for p in target.face_encoder.parameters())


def test_apply_face_encoder_frozen_clears_grads_only_there():
    base = Generator(GeneratorConfig(**SLIM32, emotion_enabled=False))
    target = Generator(GeneratorConfig(**SLIM32))
    apply_face_encoder(base, target, policy="frozen")
    assert not any(p.requires_grad for p in target.face_encoder.parameters())
    assert all(p.requires_grad for p in target.decoder.parameters())


def test_apply_face_encoder_rejects_mismatched_stages():
    base = Generator(GeneratorConfig(image_size=32, enc_channels=(8, 12),
                                     emotion_enabled=False))
    target = Generator(GeneratorConfig(**SLIM32))
    with pytest.raises(ValueError, match="face encoder"):
        apply_face_encoder(base, target)


def test_apply_face_encoder_rejects_bad_policy():
    base = Generator(GeneratorConfig(**SLIM32))
    with pytest.raises(ValueError, match="policy"):
        apply_face_encoder(base, base, policy="thawed")


# ----------------------------------------------------------------- main loop

def test_train_requires_frozen_sync_expert(corpus32, tmp_path):
    expert = SyncExpert(SyncExpertConfig(image_size=32, embed_dim=32,
                                         stages=5, base_width=8))
    with pytest.raises(ValueError, match="frozen"):
        train(corpus32[:8], corpus32[8:], slim_train_config("SEQ"), expert,
              run_dir=tmp_path / "run")


def test_train_perceptual_preset_needs_feature_net(corpus32, frozen_expert32, tmp_path):
    with pytest.raises(ValueError, match="feature net"):
        train(corpus32[:8], corpus32[8:], slim_train_config("PL_DA"),
              frozen_expert32, run_dir=tmp_path / "run")


def _run_short_train(corpus, expert, tmp_path, name="run", **overrides):
    cfg = slim_train_config("SEQ", **overrides)
    disc = EmotionDiscriminator(image_size=32, t=cfg.generator.t)
    return train(corpus[:8], corpus[8:], cfg, expert,
                 emotion_disc_init=disc, run_dir=tmp_path / name)


def test_train_writes_artifacts_and_drops_alpha_until_gate(corpus32, frozen_expert32, tmp_path):
    # threshold 10 means the very first validation latches the gate
    result = _run_short_train(corpus32, frozen_expert32, tmp_path,
                              gate_threshold=10.0)
    assert result.final_checkpoint.exists()
    assert (result.run_dir / "config.json").exists()
    assert (result.run_dir / "report.json").exists()
    assert (result.run_dir / "train_log.jsonl").exists()
    assert (result.run_dir / "provenance.jsonl").exists()
    # validation_every=2 over 4 steps: alpha 0 for steps 0-1, active for 2-3
    assert result.report["alpha_trajectory"] == [0.0, 0.0, ALPHA_ACTIVE, ALPHA_ACTIVE]
    assert result.gate.latched
    assert result.report["warnings"] == []
    log_steps = [json.loads(line) for line in
                 (result.run_dir / "train_log.jsonl").read_text().splitlines()]
    assert sum(1 for e in log_steps if "combined" in e) == 4
    assert sum(1 for e in log_steps if "val_sync" in e) == 2


def test_train_warns_when_gate_never_opens(corpus32, frozen_expert32, tmp_path):
    with pytest.warns(UserWarning, match="alpha gate never opened"):
        result = _run_short_train(corpus32, frozen_expert32, tmp_path,
                                  gate_threshold=0.0)
    assert not result.gate.latched
    assert result.report["alpha_trajectory"] == [0.0] * 4
    assert result.report["warnings"]


def test_train_is_deterministic_for_a_seed(corpus32, frozen_expert32, tmp_path):
    a = _run_short_train(corpus32, frozen_expert32, tmp_path, "a", gate_threshold=10.0)
    b = _run_short_train(corpus32, frozen_expert32, tmp_path, "b", gate_threshold=10.0)
    for (name, ta), (_, tb) in zip(a.generator.state_dict().items(),
                                   b.generator.state_dict().items()):
        assert torch.equal(ta, tb), name
    assert a.report["final_combined"] == b.report["final_combined"]


def test_train_resume_matches_uninterrupted_run(corpus32, frozen_expert32, tmp_path):
    full = _run_short_train(corpus32, frozen_expert32, tmp_path, "full",
                            gate_threshold=10.0, checkpoint_every=2)
    cfg = slim_train_config("SEQ", gate_threshold=10.0, checkpoint_every=2)
    disc = EmotionDiscriminator(image_size=32, t=cfg.generator.t)
    half_dir = tmp_path / "half"
    train(corpus32[:8], corpus32[8:],
          dataclasses.replace(cfg, epochs=1, steps_per_epoch=2), frozen_expert32,
          emotion_disc_init=disc, run_dir=half_dir)
    resumed = train(corpus32[:8], corpus32[8:], cfg, frozen_expert32,
                    emotion_disc_init=disc, run_dir=half_dir,
                    resume_from=half_dir / "checkpoints" / "step2.pt")
    for (name, ta), (_, tb) in zip(full.generator.state_dict().items(),
                                   resumed.generator.state_dict().items()):
        assert torch.equal(ta, tb), name
    for (name, ta), (_, tb) in zip(full.emotion_disc.state_dict().items(),
                                   resumed.emotion_disc.state_dict().items()):
        assert torch.equal(ta, tb), name


def test_train_pre_preset_respects_frozen_face_encoder(corpus32, frozen_expert32, tmp_path):
    from emoface.featurenet import FeatureNet, FeatureNetConfig
    base_cfg = BasePretrainConfig(epochs=1, steps_per_epoch=2, batch_size=2, seed=4,
                                  generator=GeneratorConfig(**SLIM32))
    base_gen, _ = pretrain_base(corpus32[:8], base_cfg)
    fnet = FeatureNet(FeatureNetConfig(image_size=32, widths=(4, 4, 8, 8))).freeze()
    cfg = slim_train_config("PRE", face_encoder_policy="frozen", gate_threshold=10.0)
    disc = EmotionDiscriminator(image_size=32, t=cfg.generator.t)
    result = train(corpus32[:8], corpus32[8:], cfg, frozen_expert32,
                   feature_net=fnet, emotion_disc_init=disc,
                   base_generator=base_gen, run_dir=tmp_path / "pre")
    for (name, src), (_, dst) in zip(base_gen.face_encoder.state_dict().items(),
                                     result.generator.face_encoder.state_dict().items()):
        assert torch.equal(src, dst), f"frozen face encoder moved: {name}"
    assert float(result.report["final_report"]["perceptual"]) >= 0.0


def test_train_aborts_on_non_finite_loss(corpus32, frozen_expert32, tmp_path, monkeypatch):
    import emoface.trainer as trainer_mod

    def poisoned(generated, ground_truth):
        return generated.sum() * 0.0 + float("nan")

    monkeypatch.setattr(trainer_mod, "recon_l1", poisoned)
    with pytest.raises(TrainingAborted, match="non-finite loss at step 0") as err:
        _run_short_train(corpus32, frozen_expert32, tmp_path)
    assert err.value.checkpoint is not None and err.value.checkpoint.exists()
    record = load_checkpoint(err.value.checkpoint, kind="train")
    assert record["extra"]["step"] == 0


def test_train_detects_sync_expert_drift(corpus32, frozen_expert32, tmp_path, monkeypatch):
    import copy

    import emoface.trainer as trainer_mod

    expert = copy.deepcopy(frozen_expert32)

    def corrupting_validation(gen, sync_expert, batch):
        with torch.no_grad():
            next(sync_expert.parameters()).add_(1.0)
        return 1.0

    monkeypatch.setattr(trainer_mod, "validation_sync_loss", corrupting_validation)
    with pytest.raises(AssertionError, match="sync expert drifted"):
        _run_short_train(corpus32, expert, tmp_path)


def test_validation_sync_loss_restores_train_mode(corpus32, frozen_expert32):
    from emoface.corpus.batching import draw_window, precompute_mels, window_batch

    gen = Generator(GeneratorConfig(**SLIM32)).train()
    mels = precompute_mels(corpus32[:2])
    rng = np.random.default_rng(0)
    batch = window_batch([draw_window(c, mels[c.clip_id], rng, "full", 5)
                          for c in corpus32[:2]])
    out = validation_sync_loss(gen, frozen_expert32, batch)
    assert math.isfinite(out) and out >= 0.0
    assert gen.training
