"""Categorical emotion labels and their fixed one-hot encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Fixed category <-> index mapping: alphabetical order of the six names.
EMOTIONS = ("anger", "disgust", "fear", "happiness", "neutral", "sadness")
NUM_EMOTIONS = len(EMOTIONS)

_INDEX = {name: i for i, name in enumerate(EMOTIONS)}


class EmotionError(ValueError):
    """Raised for unknown emotion names or malformed one-hot vectors."""


@dataclass(frozen=True)
class EmotionLabel:
    """One of the six basic emotions, with its one-hot vector."""

    category: str

    def __post_init__(self):
        if self.category not in _INDEX:
            raise EmotionError(
                f"unknown emotion {self.category!r}; expected one of {', '.join(EMOTIONS)}"
            )

    @property
    def index(self) -> int:
        return _INDEX[self.category]

    @property
    def onehot(self) -> np.ndarray:
        vec = np.zeros(NUM_EMOTIONS, dtype=np.float32)
        vec[self.index] = 1.0
        return vec

    @classmethod
    def from_name(cls, name: str) -> "EmotionLabel":
        return cls(name.strip().lower())

    @classmethod
    def from_index(cls, index: int) -> "EmotionLabel":
        if not 0 <= index < NUM_EMOTIONS:
            raise EmotionError(f"emotion index {index} out of range 0..{NUM_EMOTIONS - 1}")
        return cls(EMOTIONS[index])

    @classmethod
    def from_onehot(cls, vec) -> "EmotionLabel":
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (NUM_EMOTIONS,):
            raise EmotionError(f"one-hot must have length {NUM_EMOTIONS}, got shape {arr.shape}")
        validate_onehot(arr)
        return cls.from_index(int(arr.argmax()))


def validate_onehot(vec) -> np.ndarray:
    """Check that vec is a binary vector with exactly one 1; return it as float32."""
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (NUM_EMOTIONS,):
        raise EmotionError(f"one-hot must have length {NUM_EMOTIONS}, got shape {arr.shape}")
    binary = np.isin(arr, (0.0, 1.0)).all()
    if not binary or arr.sum() != 1.0:
        raise EmotionError("emotion condition must be one-hot: binary entries summing to 1")
    return arr.astype(np.float32)
