"""emoface: emotion-conditioned talking-face generation, evaluation and serving."""

__version__ = "0.1.0"
