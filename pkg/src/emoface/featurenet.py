"""Small frozen convolutional feature network backing the perceptual loss and
the FID feature space (desk-scale stand-in for a large pretrained backbone)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .emotions import NUM_EMOTIONS
from .netblocks import ConvBlock, _gn


class FeatureNetError(RuntimeError):
    pass


@dataclass
class FeatureNetConfig:
    image_size: int = 96
    widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    # stage outputs compared by the perceptual loss (0-based; the 2nd and 3rd)
    perceptual_stages: tuple[int, ...] = (1, 2)
    epochs: int = 4
    batch_size: int = 32
    frames_per_clip: int = 4
    lr: float = 1e-3
    seed: int = 0


class FeatureNet(nn.Module):
    """Four stride-2 conv stages + linear classifier head."""

    def __init__(self, cfg: FeatureNetConfig = FeatureNetConfig()):
        super().__init__()
        self.cfg = cfg
        self.frozen = False
        stages = []
        cin = 3
        for w in cfg.widths:
            stages.append(nn.Sequential(ConvBlock(cin, w, stride=2), ConvBlock(w, w)))
            cin = w
        self.stages = nn.ModuleList(stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(cfg.widths[-1], NUM_EMOTIONS)

    def forward_features(self, x: torch.Tensor) -> list:
        """Per-stage feature maps for a (B, 3, H, W) batch."""
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.pool(self.forward_features(x)[-1]).flatten(1))

    def fid_features(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate-stage activations, global-average-pooled."""
        return self.pool(self.forward_features(x)[-2]).flatten(1)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True
        self.eval()
        return self


def train_featurenet(clips, cfg: FeatureNetConfig = FeatureNetConfig()):
    """Fit the feature net as a per-frame emotion classifier, then freeze it."""
    from .corpus.batching import frames_to_tensor

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    net = FeatureNet(cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    ce = nn.CrossEntropyLoss()

    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(clips))
        losses = []
        batch_x, batch_y = [], []
        for i in order:
            clip = clips[i]
            picks = rng.integers(0, clip.num_frames, size=cfg.frames_per_clip)
            for k in picks:
                batch_x.append(frames_to_tensor(clip.frames_float(k, k + 1))[0])
                batch_y.append(clip.emotion.index)
            while len(batch_x) >= cfg.batch_size:
                x = torch.stack(batch_x[: cfg.batch_size])
                y = torch.tensor(batch_y[: cfg.batch_size], dtype=torch.long)
                del batch_x[: cfg.batch_size], batch_y[: cfg.batch_size]
                loss = ce(net(x), y)
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)))
    net.freeze()
    return net, history
