"""Objective terms for the generator and their weighted combination.

The combined objective is
    L_gen = alpha * E_sync + beta * L_perc + gamma * L_emo + (1 - alpha - beta - gamma) * L_recon
with alpha gated 0 -> 0.03 during training, beta = 0.01, gamma = 0.001.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch

from .emotions import NUM_EMOTIONS
from .netblocks import EmotionEncoder

LOG_EPS = 1e-7          # clamp inside -log
ALPHA_ACTIVE = 0.03     # sync weight once the validation gate opens
BETA_DEFAULT = 0.01
GAMMA_DEFAULT = 0.001


class LossError(ValueError):
    pass


@dataclass
class LossWeights:
    alpha: float = 0.0
    beta: float = BETA_DEFAULT
    gamma: float = GAMMA_DEFAULT

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise LossError("loss weights must be non-negative")
        if self.alpha + self.beta + self.gamma >= 1.0:
            raise LossError("alpha + beta + gamma must be < 1")

    @property
    def recon(self) -> float:
        return 1.0 - self.alpha - self.beta - self.gamma

    def to_dict(self) -> dict:
        return {**asdict(self), "recon": self.recon}


@dataclass
class LossReport:
    recon: float
    sync: float
    perceptual: float
    emotion: float
    combined: float
    weights: LossWeights

    def to_dict(self) -> dict:
        return {
            "recon": self.recon,
            "sync": self.sync,
            "perceptual": self.perceptual,
            "emotion": self.emotion,
            "combined": self.combined,
            "weights": self.weights.to_dict(),
        }


def recon_l1(generated: torch.Tensor, ground_truth: torch.Tensor) -> torch.Tensor:
    """Mean absolute elementwise difference."""
    if generated.shape != ground_truth.shape:
        raise LossError(
            f"shape mismatch: generated {tuple(generated.shape)} vs "
            f"ground truth {tuple(ground_truth.shape)}"
        )
    return (generated - ground_truth).abs().mean()


def sync_loss(p_sync: torch.Tensor) -> torch.Tensor:
    """E_sync = mean over samples of -log P_sync (P clamped at LOG_EPS)."""
    return -torch.log(torch.clamp(p_sync, min=LOG_EPS)).mean()


def perceptual(generated: torch.Tensor, ground_truth: torch.Tensor,
               feature_net, stages: tuple[int, ...] | None = None) -> torch.Tensor:
    """Mean over declared stages of MSE between frozen feature activations.

    Inputs are (B, 3, H, W) frame batches; feature_net must be frozen.
    """
    if not getattr(feature_net, "frozen", False):
        raise LossError("perceptual loss requires a frozen feature network")
    if generated.shape != ground_truth.shape:
        raise LossError("generated and ground-truth batches must match in shape")
    stages = feature_net.cfg.perceptual_stages if stages is None else stages
    f_gen = feature_net.forward_features(generated)
    f_gt = feature_net.forward_features(ground_truth)
    losses = [torch.mean((f_gen[i] - f_gt[i]) ** 2) for i in stages]
    return torch.stack(losses).mean()


def emotion_ce(predicted_probs: torch.Tensor, onehot: torch.Tensor,
               scale_by_classes: bool = True) -> torch.Tensor:
    """Cross-entropy against the one-hot condition, scaled by 1/6.

    The 1/N with N = number of emotion classes is implemented literally;
    `scale_by_classes=False` gives the conventional unscaled form.
    """
    if predicted_probs.dim() == 1:
        predicted_probs = predicted_probs.unsqueeze(0)
    if onehot.dim() == 1:
        onehot = onehot.unsqueeze(0)
    if predicted_probs.shape != onehot.shape or predicted_probs.shape[-1] != NUM_EMOTIONS:
        raise LossError(f"expected (N, {NUM_EMOTIONS}) probabilities and one-hots")
    if bool((predicted_probs < 0).any()):
        raise LossError("predicted probabilities must be non-negative")
    sums = predicted_probs.sum(dim=-1)
    if not bool(torch.all((sums - 1.0).abs() < 1e-4)):
        raise LossError("predicted probabilities must sum to 1 per sample")
    EmotionEncoder.validate_onehot(onehot)
    ce = -(onehot * torch.log(torch.clamp(predicted_probs, min=LOG_EPS))).sum(dim=-1)
    if scale_by_classes:
        ce = ce / NUM_EMOTIONS
    return ce.mean()


def combined(sync, perceptual_term, emotion, recon, weights: LossWeights):
    """Eq-5 weighted sum; works on floats and tensors alike."""
    return (weights.alpha * sync + weights.beta * perceptual_term
            + weights.gamma * emotion + weights.recon * recon)


def _scalar(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def make_report(sync, perceptual_term, emotion, recon, weights: LossWeights) -> LossReport:
    sync, perceptual_term = _scalar(sync), _scalar(perceptual_term)
    emotion, recon = _scalar(emotion), _scalar(recon)
    total = combined(sync, perceptual_term, emotion, recon, weights)
    return LossReport(recon=recon, sync=sync, perceptual=perceptual_term,
                      emotion=emotion, combined=float(total), weights=weights)
