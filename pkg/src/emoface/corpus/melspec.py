"""Log-mel spectrogram extraction.

Framing puts frame k at sample k*hop with zero-padding past the signal end, so
the frame count is exactly ceil(num_samples / hop) - a property the window/mel
alignment arithmetic depends on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly

from .records import CorpusError


@dataclass(frozen=True)
class MelParams:
    sample_rate: int = 16000
    n_mels: int = 80
    win_length_s: float = 0.025
    hop_s: float = 0.010
    n_fft: int = 512
    floor: float = 1e-5
    fmin: float = 0.0
    fmax: float | None = None          # defaults to Nyquist
    resample_on_mismatch: bool = True  # False rejects audio at other rates

    @property
    def win_length(self) -> int:
        return int(round(self.win_length_s * self.sample_rate))

    @property
    def hop(self) -> int:
        return int(round(self.hop_s * self.sample_rate))

    @property
    def log_floor(self) -> float:
        """The output value of a fully silent bin."""
        return float(np.log(self.floor))

    def num_frames(self, num_samples: int) -> int:
        return int(np.ceil(num_samples / self.hop))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(params: MelParams) -> np.ndarray:
    """Triangular mel filterbank, (n_mels, n_fft//2 + 1)."""
    fmax = params.fmax if params.fmax is not None else params.sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(params.fmin), hz_to_mel(fmax), params.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bins = np.floor((params.n_fft + 1) * hz_pts / params.sample_rate).astype(int)
    n_bins = params.n_fft // 2 + 1
    fb = np.zeros((params.n_mels, n_bins), dtype=np.float64)
    for m in range(1, params.n_mels + 1):
        lo, mid, hi = bins[m - 1], bins[m], bins[m + 1]
        if mid == lo:
            mid = lo + 1
        if hi == mid:
            hi = mid + 1
        for k in range(lo, min(mid, n_bins)):
            fb[m - 1, k] = (k - lo) / (mid - lo)
        for k in range(mid, min(hi, n_bins)):
            fb[m - 1, k] = (hi - k) / (hi - mid)
    return fb


def melspectrogram(audio: np.ndarray, params: MelParams = MelParams(),
                   sample_rate: int | None = None) -> np.ndarray:
    """Log-mel magnitude matrix, shape (M, n_mels) with M = ceil(len(audio) / hop).

    Values are log(max(mel_magnitude, floor)); a silent signal yields
    params.log_floor in every bin.
    """
    audio = np.asarray(audio, dtype=np.float64)
    if audio.size == 0:
        raise CorpusError("cannot compute a mel spectrogram of empty audio")
    if audio.ndim != 1:
        raise CorpusError("audio must be mono (1-D)")
    if sample_rate is not None and sample_rate != params.sample_rate:
        if not params.resample_on_mismatch:
            raise CorpusError(
                f"audio sample rate {sample_rate} != configured {params.sample_rate} "
                "and resampling is disabled"
            )
        audio = resample_poly(audio, params.sample_rate, sample_rate)

    hop, win, n_fft = params.hop, params.win_length, params.n_fft
    n_frames = params.num_frames(audio.shape[0])
    padded = np.zeros(((n_frames - 1) * hop + win,), dtype=np.float64)
    padded[: audio.shape[0]] = audio

    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * np.hanning(win)[None, :]
    spectrum = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))

    fb = mel_filterbank(params)
    mel = spectrum @ fb.T
    return np.log(np.maximum(mel, params.floor)).astype(np.float32)
