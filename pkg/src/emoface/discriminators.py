"""Lip-sync expert (frozen after pretraining) and trainable emotion discriminator."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .emotions import NUM_EMOTIONS
from .losses import LOG_EPS
from .netblocks import ConvBlock, ResBlock, _gn


SYNC_EPS = 1e-8      # Eq. 3 denominator guard

# the emotion discriminator's published conv stack: (filters, kernel, stride)
EMOTION_DISC_CONV_SPEC = ((64, 3, 2), (128, 3, 2), (256, 3, 2), (512, 3, 2), (512, 3, 2))


class FrozenModelError(RuntimeError):
    """Parameter update attempted on a frozen model."""


class TrainingFailure(RuntimeError):
    """A pretraining stage missed its acceptance bar within the epoch budget."""

    def __init__(self, message: str, metrics: dict | None = None):
        super().__init__(message)
        self.metrics = metrics or {}


# --------------------------------------------------------------------- sync


@dataclass
class SyncExpertConfig:
    image_size: int = 96
    t: int = 5
    mel_frames: int = 16
    mel_bands: int = 80
    embed_dim: int = 512
    stages: int = 7
    base_width: int = 32


class _ResDown(nn.Module):
    def __init__(self, cin, cout, stride, norm=nn.BatchNorm2d):
        super().__init__()
        self.down = ConvBlock(cin, cout, stride=stride, norm=norm)
        self.res = ResBlock(cout, norm=norm)

    def forward(self, x):
        return self.res(self.down(x))


class SyncExpert(nn.Module):
    """Two-tower sync scorer: T channel-concatenated frames vs their mel chunk.

    The towers normalize with BatchNorm rather than GroupNorm: per-sample
    normalization leaves the batch-common component of the embeddings free to
    grow until it dominates the cosine, at which point matched and offset
    pairs become indistinguishable and pretraining settles at chance
    (a two-tower collapse). Batch-centering zeroes that component at every
    stage, so only features that vary across windows reach the similarity.
    Both towers end in a ReLU so embeddings are elementwise non-negative,
    which pins the cosine in [0, 1].
    """

    def __init__(self, cfg: SyncExpertConfig = SyncExpertConfig()):
        super().__init__()
        self.cfg = cfg
        self.frozen = False

        w = cfg.base_width
        widths = [min(w * (2 ** i), cfg.embed_dim) for i in range(cfg.stages)]

        video = []
        cin = 3 * cfg.t
        for i, cout in enumerate(widths):
            video.append(_ResDown(cin, cout, stride=2 if i < 5 else 1))
            cin = cout
        self.video_tower = nn.Sequential(*video, nn.AdaptiveAvgPool2d(1))
        self.video_proj = nn.Linear(cin, cfg.embed_dim)
        self.video_norm = nn.BatchNorm1d(cfg.embed_dim)

        audio = []
        cin = 1
        audio_strides = [(1, 2), 2, 2, 2] + [1] * (cfg.stages - 4)
        for cout, stride in zip(widths, audio_strides):
            audio.append(_ResDown(cin, cout, stride=stride))
            cin = cout
        self.audio_tower = nn.Sequential(*audio, nn.AdaptiveAvgPool2d(1))
        self.audio_proj = nn.Linear(cin, cfg.embed_dim)
        self.audio_norm = nn.BatchNorm1d(cfg.embed_dim)

    def video_embed(self, stacked: torch.Tensor) -> torch.Tensor:
        """Embed channel-concatenated windows (N, 3*T, H, W)."""
        x = self.video_proj(self.video_tower(stacked).flatten(1))
        return torch.relu(self.video_norm(x))

    def audio_embed(self, mel: torch.Tensor) -> torch.Tensor:
        """Embed mel chunks (N, 1, M, F)."""
        x = self.audio_proj(self.audio_tower(mel).flatten(1))
        return torch.relu(self.audio_norm(x))

    def forward(self, frames: torch.Tensor, mel: torch.Tensor):
        """frames: (N, T, 3, H, W); mel: (N, M, F). Returns (v, s), both >= 0."""
        if frames.dim() != 5 or frames.shape[1] != self.cfg.t:
            raise ValueError(
                f"expected (N, T={self.cfg.t}, 3, H, W) frames, got {tuple(frames.shape)}"
            )
        n, t = frames.shape[:2]
        x = frames.reshape(n, 3 * t, *frames.shape[3:])   # {N,C,T,H,W} = {N,C*T,H,W}
        if mel.dim() == 2:
            mel = mel.unsqueeze(0)
        return self.video_embed(x), self.audio_embed(mel.unsqueeze(1))

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True
        self.eval()
        return self

    def assert_mutable(self):
        if self.frozen:
            raise FrozenModelError("sync expert is frozen; parameter updates are forbidden")


def sync_prob(v: torch.Tensor, s: torch.Tensor, eps: float = SYNC_EPS) -> torch.Tensor:
    """Eq. 3: P_sync = v.s / max(||v|| ||s||, eps), rowwise, in [0, 1]."""
    dot = (v * s).sum(dim=-1)
    denom = torch.clamp(v.norm(dim=-1) * s.norm(dim=-1), min=eps)
    return torch.clamp(dot / denom, 0.0, 1.0)


# ------------------------------------------------------------------ emotion


class EmotionDiscriminator(nn.Module):
    """Five pinned conv stages, two FCs, one recurrent layer over the T
    per-frame codes, last-step readout to 6 class probabilities."""

    def __init__(self, image_size: int = 96, t: int = 5):
        super().__init__()
        self.image_size = image_size
        self.t = t
        convs = []
        cin = 3
        size = image_size
        for filters, kernel, stride in EMOTION_DISC_CONV_SPEC:
            convs.append(nn.Conv2d(cin, filters, kernel, stride, padding=1))
            convs.append(_gn(filters))
            convs.append(nn.LeakyReLU(0.2, inplace=True))
            cin = filters
            size = (size + 2 - kernel) // stride + 1
        self.convs = nn.Sequential(*convs)
        self.final_spatial = size
        flat = cin * size * size
        self.fc1 = nn.Linear(flat, 512)
        self.fc2 = nn.Linear(512, 256)
        self.act = nn.LeakyReLU(0.2, inplace=True)
        self.rnn = nn.LSTM(256, 256, batch_first=True)
        self.head = nn.Linear(256, NUM_EMOTIONS)

    @property
    def conv_spec(self) -> tuple:
        """Introspection: the five (filters, kernel, stride) triples actually built."""
        spec = []
        for m in self.convs:
            if isinstance(m, nn.Conv2d):
                spec.append((m.out_channels, m.kernel_size[0], m.stride[0]))
        return tuple(spec)

    def spatial_trace(self) -> list[int]:
        sizes = [self.image_size]
        for _, kernel, stride in EMOTION_DISC_CONV_SPEC:
            sizes.append((sizes[-1] + 2 - kernel) // stride + 1)
        return sizes

    def _check_input(self, frames: torch.Tensor):
        if frames.dim() != 5:
            raise ValueError(f"expected (N, T, 3, H, W) frames, got {tuple(frames.shape)}")
        h, w = frames.shape[-2:]
        if h != self.image_size or w != self.image_size:
            trace = "->".join(str(s) for s in self.spatial_trace())
            raise ValueError(
                f"emotion discriminator expects {self.image_size}x{self.image_size} frames "
                f"(five stride-2 stages {EMOTION_DISC_CONV_SPEC} trace {trace}), "
                f"got {h}x{w}"
            )

    def frame_codes(self, frames: torch.Tensor) -> torch.Tensor:
        """Per-frame trunk codes (N, T, 256): the sequence the RNN consumes."""
        self._check_input(frames)
        n, t = frames.shape[:2]
        x = frames.reshape(n * t, *frames.shape[2:])      # {N,C,T,H,W} = {N*T,C,H,W}
        x = self.convs(x).flatten(1)
        x = self.act(self.fc1(x))
        x = self.act(self.fc2(x))
        return x.reshape(n, t, -1)

    def logits(self, frames: torch.Tensor) -> torch.Tensor:
        out, _ = self.rnn(self.frame_codes(frames))
        return self.head(out[:, -1])                      # last time step

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """Per-sample probability vector over the 6 emotion classes."""
        return torch.softmax(self.logits(frames), dim=-1)

    def log_probs(self, frames: torch.Tensor) -> torch.Tensor:
        return torch.log_softmax(self.logits(frames), dim=-1)


# -------------------------------------------------------------- pretraining


@dataclass
class SyncPretrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    windows_per_clip: int = 8
    min_offset_frames: int = 5            # >= one window
    holdout_fraction: float = 0.1
    separation_offset_s: float = 0.4
    separation_threshold: float = 0.3
    early_stop_margin: float = 0.05       # stop once held-out separation clears threshold + margin
    min_epochs: int = 4
    seed: int = 0
    expert: SyncExpertConfig = field(default_factory=SyncExpertConfig)


def _bce_on_prob(p: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = torch.clamp(p, LOG_EPS, 1.0 - LOG_EPS)
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p)).mean()


def sync_bce_decreases(epoch_bce, window: int | None = None, slack: float = 0.015) -> bool:
    """Training-curve check: the per-epoch BCE on P_sync decreases, judged
    monotone after an epoch-level moving average (small slack absorbs
    batch-sampling jitter)."""
    vals = list(epoch_bce)
    if len(vals) < 2:
        return False
    if window is None:
        window = max(3, round(len(vals) / 3))
    window = min(window, len(vals))
    smoothed = [float(np.mean(vals[i: i + window])) for i in range(len(vals) - window + 1)]
    if smoothed[-1] >= smoothed[0]:
        return False
    return all(b <= a + slack for a, b in zip(smoothed, smoothed[1:]))


def pretrain_sync_expert(clips, cfg: SyncPretrainConfig = SyncPretrainConfig()):
    """Train a SyncExpert to separate matched from offset audio, then freeze it.

    Negatives are same-clip mel chunks at a temporal offset of at least one
    window. Returns (frozen expert, history dict). Raises TrainingFailure if the
    held-out separation bar is missed after the epoch budget.
    """
    from .corpus.batching import sync_pair_batches, sync_separation

    torch.manual_seed(cfg.seed)
    expert = SyncExpert(cfg.expert)
    opt = torch.optim.Adam(expert.parameters(), lr=cfg.lr, betas=(0.5, 0.999))

    rng = np.random.default_rng(cfg.seed)
    n_hold = max(1, int(round(len(clips) * cfg.holdout_fraction)))
    order = rng.permutation(len(clips))
    hold = [clips[i] for i in order[:n_hold]]
    train = [clips[i] for i in order[n_hold:]]
    if not train:
        raise ValueError("sync pretraining needs at least 2 clips")

    history = {"epoch_bce": [], "epoch_separation": []}
    for epoch in range(cfg.epochs):
        expert.assert_mutable()
        losses = []
        for frames, mel, target in sync_pair_batches(train, cfg, rng):
            v, s = expert(frames, mel)
            loss = _bce_on_prob(sync_prob(v, s), target)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history["epoch_bce"].append(float(np.mean(losses)))
        expert.eval()
        sep = sync_separation(expert, hold, cfg)
        expert.train()
        history["epoch_separation"].append(sep["separation"])
        if (epoch + 1 >= cfg.min_epochs
                and sep["separation"] >= cfg.separation_threshold + cfg.early_stop_margin):
            break

    expert.freeze()
    sep = sync_separation(expert, hold, cfg)
    history.update(sep)
    history["epochs_run"] = len(history["epoch_bce"])
    if sep["separation"] < cfg.separation_threshold:
        raise TrainingFailure(
            f"sync expert separation {sep['separation']:.3f} below "
            f"{cfg.separation_threshold} after {history['epochs_run']} epochs",
            metrics={**sep, "epoch_bce": history["epoch_bce"],
                     "epoch_separation": history["epoch_separation"]},
        )
    return expert, history
