"""Generator architecture: encoders, skip-connected decoder, and the two
emotion-fusion strategies (END plane concat vs SEQ embedding concat)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn

from .emotions import NUM_EMOTIONS


class ConfigError(ValueError):
    """Invalid architecture configuration."""


def _gn(ch: int) -> nn.GroupNorm:
    # GroupNorm keeps every frame row independent of the rest of the batch,
    # which the frame-independence contract needs (BatchNorm would couple them)
    return nn.GroupNorm(8 if ch % 8 == 0 else 1, ch)


class ConvBlock(nn.Module):
    def __init__(self, cin, cout, kernel=3, stride=1, padding=1, act=True, norm=_gn):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, stride, padding)
        self.norm = norm(cout)
        self.act = nn.LeakyReLU(0.2, inplace=True) if act else nn.Identity()

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class ResBlock(nn.Module):
    def __init__(self, ch, norm=_gn):
        super().__init__()
        self.c1 = ConvBlock(ch, ch, norm=norm)
        self.c2 = nn.Conv2d(ch, ch, 3, 1, 1)
        self.norm = norm(ch)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.c2(self.c1(x))) + x)


class UpBlock(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.up = nn.ConvTranspose2d(cin, cout, 4, 2, 1)
        self.norm = _gn(cout)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.up(x)))


@dataclass
class GeneratorConfig:
    """Architecture knobs for the frame generator.

    With the defaults the decoder's final pre-output feature block is
    {N*T, 80, 96, 96}; END mode appends one projected emotion plane for
    80 + 1 = 81 channels before the output block.
    """

    image_size: int = 96
    t: int = 5
    concat_mode: str = "END"                  # END | SEQ
    emotion_enabled: bool = True
    emotion_embed_dim: int = 128
    audio_embed_dim: int = 512
    noise_enabled: bool = False
    noise_dim: int = 64
    enc_channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    pre_output_channels: int = 80
    mel_frames: int = 16
    mel_bands: int = 80

    def __post_init__(self):
        if self.concat_mode not in ("END", "SEQ"):
            raise ConfigError(f"concat_mode must be END or SEQ, got {self.concat_mode!r}")
        stride_product = 2 ** len(self.enc_channels)
        if self.image_size % stride_product != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by the stage stride "
                f"product {stride_product} ({len(self.enc_channels)} stride-2 stages)"
            )
        if self.t < 1:
            raise ConfigError("t must be at least 1")
        if self.noise_enabled and self.noise_dim < 1:
            raise ConfigError("noise_dim must be positive when noise_enabled")

    @property
    def bottleneck_size(self) -> int:
        return self.image_size // (2 ** len(self.enc_channels))

    @property
    def context_dim(self) -> int:
        """Dimension of the per-frame vector entering the decoder."""
        dim = self.audio_embed_dim
        if self.emotion_enabled and self.concat_mode == "SEQ":
            dim += self.emotion_embed_dim
        if self.noise_enabled:
            dim += self.noise_dim
        return dim


@dataclass
class EmbeddingBundle:
    """Per-frame embeddings produced by the encoders (leading axis N*T)."""

    face_skips: list
    audio_embed: torch.Tensor
    emotion_embed: Optional[torch.Tensor] = None
    noise_embed: Optional[torch.Tensor] = None


class FaceEncoder(nn.Module):
    """Encodes masked target frames + reference frames (6 input channels)
    into a pyramid of skip features, one per stride-2 stage."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        chans = cfg.enc_channels
        stages = []
        cin = 6
        for cout in chans:
            stages.append(nn.Sequential(ConvBlock(cin, cout, stride=2), ResBlock(cout)))
            cin = cout
        self.stages = nn.ModuleList(stages)

    def forward(self, masked: torch.Tensor, reference: torch.Tensor) -> list:
        if masked.shape != reference.shape:
            raise ValueError(
                f"masked {tuple(masked.shape)} and reference {tuple(reference.shape)} "
                "frame batches must have identical shapes"
            )
        x = torch.cat([masked, reference], dim=1)
        skips = []
        for stage in self.stages:
            x = stage(x)
            skips.append(x)
        return skips


class AudioEncoder(nn.Module):
    """Mel chunk (M=16, F=80) -> one audio_embed vector per window."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.mel_frames = cfg.mel_frames
        self.mel_bands = cfg.mel_bands
        w = max(cfg.audio_embed_dim // 16, 8)
        self.net = nn.Sequential(
            ConvBlock(1, w, stride=(1, 2)),          # 16x80 -> 16x40
            ConvBlock(w, w * 2, stride=2),           # -> 8x20
            ResBlock(w * 2),
            ConvBlock(w * 2, w * 4, stride=2),       # -> 4x10
            ConvBlock(w * 4, w * 8, stride=2),       # -> 2x5
            nn.AdaptiveAvgPool2d(1),
        )
        self.proj = nn.Linear(w * 8, cfg.audio_embed_dim)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        if mel.dim() == 2:
            mel = mel.unsqueeze(0)
        if mel.shape[-2:] != (self.mel_frames, self.mel_bands):
            raise ValueError(
                f"mel chunk must be (M={self.mel_frames}, F={self.mel_bands}) "
                f"per window, got {tuple(mel.shape[-2:])}"
            )
        x = self.net(mel.unsqueeze(1)).flatten(1)
        return self.proj(x)


class EmotionEncoder(nn.Module):
    """Feed-forward one-hot condition encoder with leaky activations."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(NUM_EMOTIONS, 64),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(64, cfg.emotion_embed_dim),
            nn.LeakyReLU(0.2, inplace=True),
        )

    @staticmethod
    def validate_onehot(onehot: torch.Tensor):
        if onehot.dim() == 1:
            onehot = onehot.unsqueeze(0)
        if onehot.shape[-1] != NUM_EMOTIONS:
            raise ValueError(f"emotion condition must have {NUM_EMOTIONS} entries")
        binary = (onehot == 0.0) | (onehot == 1.0)
        if not bool(binary.all()) or not bool((onehot.sum(dim=-1) == 1.0).all()):
            raise ValueError("emotion condition must be a valid one-hot vector")

    def forward(self, onehot: torch.Tensor) -> torch.Tensor:
        self.validate_onehot(onehot)
        if onehot.dim() == 1:
            onehot = onehot.unsqueeze(0)
        return self.net(onehot)


class NoiseEncoder(nn.Module):
    """Single recurrent layer over T standard-normal draws.

    Bias-free cell, so the all-zero noise sequence is an exact fixed point:
    every step's state stays zero and all T outputs coincide.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.noise_dim = cfg.noise_dim
        self.rnn = nn.LSTM(cfg.noise_dim, cfg.noise_dim, batch_first=True, bias=False)
        self.proj = nn.Linear(cfg.noise_dim, cfg.noise_dim)

    def forward(self, noise: torch.Tensor) -> torch.Tensor:
        """noise: (N, T, noise_dim) -> (N, T, noise_dim) per-frame embeddings."""
        out, _ = self.rnn(noise)
        return self.proj(out)

    def sample(self, n: int, t: int, seed: int, device=None) -> torch.Tensor:
        gen = torch.Generator(device="cpu").manual_seed(int(seed))
        noise = torch.randn(n, t, self.noise_dim, generator=gen)
        if device is not None:
            noise = noise.to(device)
        return noise


class Decoder(nn.Module):
    """Mirrors the face encoder: skip concat at every resolution, ends at a
    pre-output feature block (80 channels at 96x96 with defaults)."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        chans = cfg.enc_channels
        s0 = cfg.bottleneck_size
        top = chans[-1]
        self.head = nn.Sequential(nn.Linear(cfg.context_dim, 128), nn.ReLU(inplace=True))
        self.seed_map = nn.Sequential(
            nn.ConvTranspose2d(128, top, kernel_size=s0), _gn(top), nn.ReLU(inplace=True)
        )
        ups = []
        cin = top
        # consume skips deepest-first; last stage lands on pre_output_channels
        out_chain = list(chans[:-1][::-1]) + [cfg.pre_output_channels]
        for skip_ch, cout in zip(chans[::-1], out_chain):
            ups.append(UpBlock(cin + skip_ch, cout))
            cin = cout
        self.ups = nn.ModuleList(ups)

    def forward(self, context: torch.Tensor, skips: list) -> torch.Tensor:
        x = self.head(context)
        x = self.seed_map(x.unsqueeze(-1).unsqueeze(-1))
        for up, skip in zip(self.ups, skips[::-1]):
            x = up(torch.cat([x, skip], dim=1))
        return x


class OutputBlock(nn.Module):
    """Final mapping to 3-channel frames, bounded to [0,1]."""

    def __init__(self, cin: int):
        super().__init__()
        self.net = nn.Sequential(
            ConvBlock(cin, 32),
            nn.Conv2d(32, 3, 1),
            nn.Sigmoid(),
        )

    def forward(self, x):
        return self.net(x)


class Generator(nn.Module):
    """Emotion-conditioned frame generator.

    Inputs per window: masked target frames and reference frames (N, T, 3, H, W),
    one mel chunk (N, M, F), one emotion one-hot (N, 6). Every frame row on the
    flattened N*T axis is synthesized independently.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.face_encoder = FaceEncoder(cfg)
        self.audio_encoder = AudioEncoder(cfg)
        self.emotion_encoder = EmotionEncoder(cfg) if cfg.emotion_enabled else None
        self.noise_encoder = NoiseEncoder(cfg) if cfg.noise_enabled else None
        self.decoder = Decoder(cfg)
        if cfg.emotion_enabled and cfg.concat_mode == "END":
            # learned projection of the emotion embedding to one spatial plane
            self.plane_proj = nn.Linear(cfg.emotion_embed_dim, cfg.image_size ** 2)
            out_cin = cfg.pre_output_channels + 1
        else:
            self.plane_proj = None
            out_cin = cfg.pre_output_channels
        self.output_block = OutputBlock(out_cin)

    # -------------------------------------------------------------- encoders

    def encode_noise(self, n: int, t: int, seed: int) -> torch.Tensor:
        if self.noise_encoder is None:
            raise ConfigError("noise encoder requested but noise_enabled is off")
        noise = self.noise_encoder.sample(n, t, seed, device=next(self.parameters()).device)
        return self.noise_encoder(noise)

    def encode(self, masked, reference, mel, onehot=None, noise_seed=None) -> EmbeddingBundle:
        """Run every encoder; all per-frame embeddings share the N*T axis."""
        n, t = masked.shape[:2]
        if t != self.cfg.t:
            raise ValueError(f"expected T={self.cfg.t} frames per window, got {t}")
        flat_masked = masked.reshape(n * t, *masked.shape[2:])
        flat_reference = reference.reshape(n * t, *reference.shape[2:])
        skips = self.face_encoder(flat_masked, flat_reference)

        audio = self.audio_encoder(mel)                       # (N, A)
        audio = audio.repeat_interleave(t, dim=0)             # (N*T, A)

        emotion = None
        if self.cfg.emotion_enabled:
            if onehot is None:
                raise ValueError("emotion condition required when emotion_enabled")
            emotion = self.emotion_encoder(onehot)            # (N, E)
            emotion = emotion.repeat_interleave(t, dim=0)     # (N*T, E)

        noise = None
        if self.cfg.noise_enabled:
            seed = 0 if noise_seed is None else noise_seed
            noise = self.encode_noise(n, t, seed).reshape(n * t, -1)

        return EmbeddingBundle(face_skips=skips, audio_embed=audio,
                               emotion_embed=emotion, noise_embed=noise)

    # ---------------------------------------------------------------- fusion

    def fuse_context(self, bundle: EmbeddingBundle) -> torch.Tensor:
        """Per-frame decoder context; SEQ mode concatenates audio + emotion."""
        parts = [bundle.audio_embed]
        if self.cfg.emotion_enabled and self.cfg.concat_mode == "SEQ":
            if bundle.emotion_embed.shape[0] != bundle.audio_embed.shape[0]:
                raise ValueError("audio and emotion embeddings disagree on the frame axis")
            parts.append(bundle.emotion_embed)
        if bundle.noise_embed is not None:
            parts.append(bundle.noise_embed)
        return torch.cat(parts, dim=1)

    def fuse_end(self, features: torch.Tensor, emotion_embed: torch.Tensor) -> torch.Tensor:
        """Append the projected 1-channel emotion plane: 80 + 1 = 81 channels."""
        s = self.cfg.image_size
        if features.shape[-2:] != (s, s):
            raise ValueError(
                f"pre-output features must be {s}x{s}, got {tuple(features.shape[-2:])}"
            )
        plane = self.plane_proj(emotion_embed).reshape(-1, 1, s, s)
        if plane.shape[0] != features.shape[0]:
            raise ValueError("emotion plane and features disagree on the frame axis")
        return torch.cat([features, plane], dim=1)

    # --------------------------------------------------------------- forward

    def synthesize(self, bundle: EmbeddingBundle) -> torch.Tensor:
        context = self.fuse_context(bundle)
        features = self.decoder(context, bundle.face_skips)
        if self.plane_proj is not None:
            features = self.fuse_end(features, bundle.emotion_embed)
        return self.output_block(features)

    def forward(self, masked, reference, mel, onehot=None, noise_seed=None) -> torch.Tensor:
        n, t = masked.shape[:2]
        bundle = self.encode(masked, reference, mel, onehot, noise_seed)
        frames = self.synthesize(bundle)                      # (N*T, 3, H, W)
        return frames.reshape(n, t, *frames.shape[1:])

    # ------------------------------------------------------------- utilities

    def parameter_groups(self) -> dict:
        groups = {
            "face": list(self.face_encoder.parameters()),
            "audio": list(self.audio_encoder.parameters()),
            "decoder": list(self.decoder.parameters()) + list(self.output_block.parameters()),
        }
        if self.emotion_encoder is not None:
            emo = list(self.emotion_encoder.parameters())
            if self.plane_proj is not None:
                emo += list(self.plane_proj.parameters())
            groups["emotion"] = emo
        if self.noise_encoder is not None:
            groups["noise"] = list(self.noise_encoder.parameters())
        return groups
