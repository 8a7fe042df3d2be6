"""Training orchestration: pretraining stages, the alternating main loop with
the alpha gate, presets END / SEQ / PL_DA / PRE, logging and checkpointing."""

from __future__ import annotations

import copy
import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpointing import capture_rng, restore_rng, save_checkpoint, load_checkpoint
from .corpus.augment import AugmentationRanges
from .corpus.batching import (draw_window, emotion_batches, precompute_mels,
                              training_batches, window_batch)
from .corpus.io import write_provenance
from .corpus.windows import split
from .discriminators import (EmotionDiscriminator, SyncExpert, TrainingFailure,
                             sync_prob)
from .losses import (ALPHA_ACTIVE, LossWeights, combined, emotion_ce, make_report,
                     perceptual, recon_l1, sync_loss)
from .netblocks import Generator, GeneratorConfig

PRESETS = ("END", "SEQ", "PL_DA", "PRE")


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class GateState:
    """Validation-gated sync-loss weight: 0 until the gate opens, then 0.03."""

    alpha_current: float = 0.0
    latched: bool = False
    threshold: float = 0.75
    last_val_sync: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GateState":
        return cls(**d)


def update_gate(state: GateState, val_sync_loss: float) -> GateState:
    """Latch alpha to its active value at the first below-threshold validation."""
    latched = state.latched or (val_sync_loss < state.threshold)
    return GateState(
        alpha_current=ALPHA_ACTIVE if latched else 0.0,
        latched=latched,
        threshold=state.threshold,
        last_val_sync=float(val_sync_loss),
    )


@dataclass
class TrainConfig:
    preset: str = "PL_DA"
    epochs: int = 2
    steps_per_epoch: int = 50
    batch_size: int = 8
    gen_lr: float = 1e-4
    disc_lr: float = 1e-6
    betas: tuple[float, float] = (0.5, 0.999)
    gate_threshold: float = 0.75
    beta: float = 0.01
    gamma: float = 0.001
    validation_every: int = 25         # steps
    checkpoint_every: int = 0          # steps; 0 = final only
    val_windows: int = 16
    mask_mode: str = "full"
    seed: int = 0
    scale_ce_by_classes: bool = True
    face_encoder_policy: str = "init"  # frozen | init (PRE preset)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if self.face_encoder_policy not in ("frozen", "init"):
            raise ValueError("face_encoder_policy must be 'frozen' or 'init'")
        # preset pins the concat mode
        mode = "END" if self.preset == "END" else "SEQ"
        if self.generator.concat_mode != mode:
            self.generator = dataclasses.replace(self.generator, concat_mode=mode)

    @property
    def use_perceptual(self) -> bool:
        return self.preset in ("PL_DA", "PRE")

    @property
    def use_augmentation(self) -> bool:
        return self.preset in ("PL_DA", "PRE")

    @property
    def use_base_pretrain(self) -> bool:
        return self.preset == "PRE"


# ------------------------------------------------------------- pretraining


@dataclass
class EmotionPretrainConfig:
    epochs: int = 25
    steps_per_epoch: int = 40
    batch_size: int = 16
    lr: float = 3e-4
    accuracy_bar: float = 0.60
    early_stop_acc: float | None = None   # defaults to accuracy_bar + 0.1
    early_stop_metric: str = "window"     # "window" | "clip"
    min_epochs: int = 2
    val_windows_per_clip: int = 2
    seed: int = 0
    t: int = 5
    image_size: int = 96


def emotion_accuracy(disc: EmotionDiscriminator, clips, windows_per_clip: int = 2,
                     seed: int = 99, t: int = 5) -> float:
    rng = np.random.default_rng(seed)
    hits = total = 0
    with torch.no_grad():
        for frames, labels in emotion_batches(clips, rng, batch_size=8,
                                              steps=max(1, len(clips) * windows_per_clip // 8),
                                              t=t):
            pred = disc(frames).argmax(dim=-1)
            hits += int((pred == labels).sum())
            total += len(labels)
    return hits / max(total, 1)


def clip_accuracy(disc: EmotionDiscriminator, clips, t: int = 5) -> float:
    """Clip-level accuracy with the same soft vote the eval suite uses to
    qualify a classifier: mean probabilities over disjoint T-windows."""
    from .evalsuite import video_probs  # deferred: evalsuite pulls in the metric stack

    hits = 0
    for clip in clips:
        probs = video_probs(disc, clip.frames_u8.astype(np.float32) / 255.0)
        hits += int(int(np.argmax(probs)) == clip.emotion.index)
    return hits / max(len(clips), 1)


def pretrain_emotion_disc(train_clips, val_clips, cfg: EmotionPretrainConfig = EmotionPretrainConfig()):
    """Warm-start the emotion discriminator as a classifier on true labels.

    Returns (disc, history). The weights initialize the main loop's
    discriminator, which keeps training — they are not frozen here. With
    ``early_stop_metric="clip"`` the stopping rule and the final bar use
    clip-level soft-vote accuracy, matching classifier qualification.
    """
    if cfg.early_stop_metric not in ("window", "clip"):
        raise ValueError(f"unknown early_stop_metric {cfg.early_stop_metric!r}")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    disc = EmotionDiscriminator(t=cfg.t, image_size=cfg.image_size)
    # plain classification: default Adam momentum converges far more reliably
    # across seeds than the adversarial-loop betas used in the main trainer
    opt = torch.optim.Adam(disc.parameters(), lr=cfg.lr)
    # halve the lr periodically: the full-width discriminator oscillates on
    # small corpora if the initial rate is kept to the end
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=8, gamma=0.5)
    stop_at = cfg.early_stop_acc if cfg.early_stop_acc is not None else cfg.accuracy_bar + 0.1
    history = {"epoch_ce": [], "epoch_val_accuracy": [], "val_accuracy": None}
    for epoch in range(cfg.epochs):
        losses = []
        for frames, labels in emotion_batches(train_clips, rng, cfg.batch_size,
                                              cfg.steps_per_epoch, t=cfg.t):
            onehot = torch.eye(6, dtype=torch.float32)[labels]
            loss = emotion_ce(disc(frames), onehot)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history["epoch_ce"].append(float(np.mean(losses)))
        sched.step()
        disc.eval()
        val_acc = emotion_accuracy(disc, val_clips, cfg.val_windows_per_clip,
                                   seed=cfg.seed + 1, t=cfg.t)
        stop_val = val_acc
        if cfg.early_stop_metric == "clip":
            stop_val = clip_accuracy(disc, val_clips, t=cfg.t)
            history.setdefault("epoch_clip_accuracy", []).append(stop_val)
        disc.train()
        history["epoch_val_accuracy"].append(val_acc)
        if epoch + 1 >= cfg.min_epochs and stop_val >= stop_at:
            break
    disc.eval()
    acc = emotion_accuracy(disc, val_clips, cfg.val_windows_per_clip, seed=cfg.seed + 1, t=cfg.t)
    history["val_accuracy"] = acc
    if cfg.early_stop_metric == "clip":
        acc = clip_accuracy(disc, val_clips, t=cfg.t)
        history["clip_accuracy"] = acc
    disc.train()
    history["epochs_run"] = len(history["epoch_ce"])
    if acc < cfg.accuracy_bar:
        raise TrainingFailure(
            f"emotion discriminator {cfg.early_stop_metric} accuracy {acc:.3f} below "
            f"{cfg.accuracy_bar} after {history['epochs_run']} epochs",
            metrics=history,
        )
    return disc, history


@dataclass
class BasePretrainConfig:
    epochs: int = 2
    steps_per_epoch: int = 60
    batch_size: int = 8
    lr: float = 1e-4
    mask_mode: str = "half"
    whole_face: bool = True
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self):
        if self.generator.emotion_enabled:
            self.generator = dataclasses.replace(self.generator, emotion_enabled=False)


def pretrain_base(clips, cfg: BasePretrainConfig = BasePretrainConfig()):
    """Train the emotion-free base generator on reconstruction alone.

    whole_face=False restricts the L1 to the masked lower-half rows.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    gen = Generator(cfg.generator)
    opt = torch.optim.Adam(gen.parameters(), lr=cfg.lr, betas=(0.5, 0.999))
    mels = precompute_mels(clips)
    history = []
    h = cfg.generator.image_size
    for _ in range(cfg.epochs):
        losses = []
        for batch in training_batches(clips, mels, rng, cfg.batch_size,
                                      cfg.steps_per_epoch, mask_mode=cfg.mask_mode,
                                      t=cfg.generator.t):
            fake = gen(batch["masked"], batch["reference"], batch["mel"])
            if cfg.whole_face:
                loss = recon_l1(fake, batch["ground_truth"])
            else:
                loss = recon_l1(fake[..., h // 2:, :], batch["ground_truth"][..., h // 2:, :])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)))
    return gen, history


def apply_face_encoder(base_generator: Generator, target_generator: Generator,
                       policy: str = "init") -> Generator:
    """Transplant the base model's face encoder into the target generator.

    policy 'frozen' additionally excludes those parameters from optimization
    (their requires_grad is cleared); 'init' leaves them trainable.
    """
    if policy not in ("frozen", "init"):
        raise ValueError("policy must be 'frozen' or 'init'")
    src = base_generator.face_encoder.state_dict()
    dst = target_generator.face_encoder.state_dict()
    if set(src) != set(dst):
        raise ValueError("face encoder stage mismatch between base and target")
    for name, tensor in src.items():
        if dst[name].shape != tensor.shape:
            raise ValueError(f"face encoder stage mismatch at parameter {name!r}")
    target_generator.face_encoder.load_state_dict(src)
    if policy == "frozen":
        for p in target_generator.face_encoder.parameters():
            p.requires_grad_(False)
    return target_generator


# ---------------------------------------------------------------- main loop


@dataclass
class TrainResult:
    run_dir: Path
    final_checkpoint: Path
    report: dict
    gate: GateState
    generator: Generator
    emotion_disc: EmotionDiscriminator


def _fixed_validation_windows(val_clips, mels, cfg: TrainConfig):
    rng = np.random.default_rng(cfg.seed + 7919)
    windows = []
    for k in range(cfg.val_windows):
        clip = val_clips[int(rng.integers(0, len(val_clips)))]
        windows.append(draw_window(clip, mels[clip.clip_id], rng,
                                   cfg.mask_mode, cfg.generator.t))
    return window_batch(windows)


def validation_sync_loss(gen: Generator, expert: SyncExpert, batch: dict) -> float:
    gen.eval()
    with torch.no_grad():
        fake = gen(batch["masked"], batch["reference"], batch["mel"], batch["onehot"])
        v, s = expert(fake, batch["mel"])
        out = float(sync_loss(sync_prob(v, s)))
    gen.train()
    return out


def train(train_clips, val_clips, cfg: TrainConfig, sync_expert: SyncExpert,
          feature_net=None, emotion_disc_init: EmotionDiscriminator | None = None,
          base_generator: Generator | None = None, run_dir=None,
          resume_from=None) -> TrainResult:
    """Alternating emotion-discriminator / generator optimization.

    Discriminator steps use ground-truth frames against the true label;
    generator steps minimize the combined objective, with the emotion term
    computed from the discriminator's prediction on generated frames.
    """
    if not sync_expert.frozen:
        raise ValueError("the sync expert must be pretrained and frozen before training")
    if cfg.use_perceptual and feature_net is None:
        raise ValueError(f"preset {cfg.preset} needs a frozen feature net")

    torch.manual_seed(cfg.seed)
    torch.set_num_threads(max(1, torch.get_num_threads()))
    rng = np.random.default_rng(cfg.seed)

    run_dir = Path(run_dir) if run_dir is not None else Path("runs") / f"{cfg.preset.lower()}_{cfg.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(dataclasses.asdict(cfg), default=str, indent=2))

    gen = Generator(cfg.generator)
    if cfg.use_base_pretrain and base_generator is not None:
        apply_face_encoder(base_generator, gen, cfg.face_encoder_policy)
    disc = copy.deepcopy(emotion_disc_init) if emotion_disc_init is not None \
        else EmotionDiscriminator(image_size=cfg.generator.image_size, t=cfg.generator.t)

    opt_g = torch.optim.Adam([p for p in gen.parameters() if p.requires_grad],
                             lr=cfg.gen_lr, betas=cfg.betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.disc_lr, betas=cfg.betas)
    gate = GateState(threshold=cfg.gate_threshold)
    sync_ref = {n: t.clone() for n, t in sync_expert.state_dict().items()}

    start_step = 0
    if resume_from is not None:
        record = load_checkpoint(resume_from, kind="train")
        gen.load_state_dict(record["modules"]["generator"])
        disc.load_state_dict(record["modules"]["emotion_disc"])
        opt_g.load_state_dict(record["optimizers"]["generator"])
        opt_d.load_state_dict(record["optimizers"]["emotion_disc"])
        gate = GateState.from_dict(record["extra"]["gate"])
        start_step = int(record["extra"]["step"])
        restore_rng(record["rng"], rng)

    mels = precompute_mels(train_clips)
    val_batch = _fixed_validation_windows(val_clips, precompute_mels(val_clips), cfg)
    augment = AugmentationRanges() if cfg.use_augmentation else None
    total_steps = cfg.epochs * cfg.steps_per_epoch
    log_path = run_dir / "train_log.jsonl"
    log_f = open(log_path, "a" if start_step else "w")
    prov_path = run_dir / "provenance.jsonl"
    if not start_step:
        prov_path.unlink(missing_ok=True)

    def checkpoint(path, step):
        return save_checkpoint(
            path, kind="train", config=cfg.generator,
            modules={"generator": gen, "emotion_disc": disc},
            optimizers={"generator": opt_g, "emotion_disc": opt_d},
            extra={"step": step, "preset": cfg.preset, "gate": gate.to_dict(),
                   "train_config": dataclasses.asdict(cfg),
                   "last_report": history["reports"][-1] if history["reports"] else None},
            rng=capture_rng(rng),
        )

    history = {"reports": [], "alpha": [], "warnings": []}
    weights = LossWeights(alpha=gate.alpha_current, beta=cfg.beta, gamma=cfg.gamma)

    for step in range(start_step, total_steps):
        idx = rng.integers(0, len(train_clips), size=cfg.batch_size)
        windows = [draw_window(train_clips[i], mels[train_clips[i].clip_id], rng,
                               cfg.mask_mode, cfg.generator.t, augment) for i in idx]
        write_provenance(prov_path, [w.provenance for w in windows], append=True)
        batch = window_batch(windows)
        onehot = batch["onehot"]

        # (a) discriminator step on ground-truth frames vs the true label
        d_probs = disc(batch["ground_truth"])
        d_loss = emotion_ce(d_probs, onehot, cfg.scale_ce_by_classes)
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        # (b) generator step on the combined objective
        fake = gen(batch["masked"], batch["reference"], batch["mel"], onehot)
        l_recon = recon_l1(fake, batch["ground_truth"])
        v, s = sync_expert(fake, batch["mel"])
        l_sync = sync_loss(sync_prob(v, s))
        if cfg.use_perceptual:
            flat_fake = fake.reshape(-1, *fake.shape[2:])
            flat_gt = batch["ground_truth"].reshape(-1, *fake.shape[2:])
            l_perc = perceptual(flat_fake, flat_gt, feature_net)
        else:
            l_perc = torch.zeros(())
        l_emo = emotion_ce(disc(fake), onehot, cfg.scale_ce_by_classes)
        weights = LossWeights(alpha=gate.alpha_current, beta=cfg.beta, gamma=cfg.gamma)
        g_loss = combined(l_sync, l_perc, l_emo, l_recon, weights)
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()

        report = make_report(l_sync, l_perc, l_emo, l_recon, weights)
        history["reports"].append(report.to_dict())
        history["alpha"].append(gate.alpha_current)
        log_f.write(json.dumps({"step": step, "disc_ce": float(d_loss.detach()),
                                **report.to_dict()}) + "\n")

        if not math.isfinite(float(g_loss.detach())) or not math.isfinite(float(d_loss.detach())):
            log_f.close()
            path = checkpoint(run_dir / "checkpoints" / f"abort_step{step}.pt", step)
            raise TrainingAborted(f"non-finite loss at step {step}", checkpoint=path)

        if cfg.validation_every and (step + 1) % cfg.validation_every == 0:
            val_loss = validation_sync_loss(gen, sync_expert, val_batch)
            gate = update_gate(gate, val_loss)
            log_f.write(json.dumps({"step": step, "val_sync": val_loss,
                                    "alpha": gate.alpha_current,
                                    "latched": gate.latched}) + "\n")

        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            checkpoint(run_dir / "checkpoints" / f"step{step + 1}.pt", step + 1)

    log_f.close()
    for name, tensor in sync_expert.state_dict().items():
        if not torch.equal(tensor, sync_ref[name]):
            raise AssertionError("sync expert drifted during training")
    if not gate.latched:
        msg = (f"alpha gate never opened: last validation sync loss "
               f"{gate.last_val_sync} >= threshold {gate.threshold}")
        warnings.warn(msg)
        history["warnings"].append(msg)

    final = checkpoint(run_dir / "final.pt", total_steps)
    first = history["reports"][0]["combined"] if history["reports"] else float("nan")
    last = history["reports"][-1]["combined"] if history["reports"] else float("nan")
    report = {
        "preset": cfg.preset,
        "seed": cfg.seed,
        "steps": total_steps,
        "first_combined": first,
        "final_combined": last,
        "final_report": history["reports"][-1] if history["reports"] else None,
        "alpha_trajectory": history["alpha"],
        "gate": gate.to_dict(),
        "warnings": history["warnings"],
    }
    (run_dir / "report.json").write_text(json.dumps(report, indent=2))
    return TrainResult(run_dir=run_dir, final_checkpoint=final, report=report,
                       gate=gate, generator=gen, emotion_disc=disc)
