"""Mel spectrogram front-end tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emoface.corpus import CorpusError, melspectrogram
from emoface.corpus.melspec import MelParams, hz_to_mel, mel_to_hz, mel_filterbank


PARAMS = MelParams()


def test_default_parameters():
    assert PARAMS.sample_rate == 16000
    assert PARAMS.n_mels == 80
    assert PARAMS.win_length == 400     # 25 ms at 16 kHz
    assert PARAMS.hop == 160            # 10 ms at 16 kHz
    assert PARAMS.log_floor == pytest.approx(math.log(1e-5))


def test_silence_is_all_floor():
    mel = melspectrogram(np.zeros(4000, dtype=np.float32), PARAMS, 16000)
    assert np.allclose(mel, PARAMS.log_floor)


def test_one_second_frame_count():
    # M = ceil(sample_count / hop): 16000 / 160 = 100 exactly
    audio = np.random.default_rng(0).standard_normal(16000).astype(np.float32)
    mel = melspectrogram(audio, PARAMS, 16000)
    assert mel.shape == (100, 80)
    # non-divisible length rounds up
    mel2 = melspectrogram(audio[:16001 - 160 * 3], PARAMS, 16000)
    assert mel2.shape[0] == math.ceil((16001 - 160 * 3) / 160)


def test_doubling_amplitude_never_decreases_bins():
    audio = (0.3 * np.random.default_rng(1).standard_normal(8000)).astype(np.float32)
    a = melspectrogram(audio, PARAMS, 16000)
    b = melspectrogram(2.0 * audio, PARAMS, 16000)
    assert np.all(b >= a - 1e-12)


def test_determinism():
    audio = np.random.default_rng(2).standard_normal(5000).astype(np.float32)
    assert np.array_equal(melspectrogram(audio, PARAMS, 16000),
                          melspectrogram(audio, PARAMS, 16000))


def test_empty_audio_rejected():
    with pytest.raises(CorpusError):
        melspectrogram(np.zeros(0, dtype=np.float32), PARAMS, 16000)


def test_stereo_rejected():
    with pytest.raises(CorpusError):
        melspectrogram(np.zeros((100, 2), dtype=np.float32), PARAMS, 16000)


def test_sample_rate_mismatch_resampled_or_rejected():
    audio = np.random.default_rng(3).standard_normal(8000).astype(np.float32)
    mel = melspectrogram(audio, PARAMS, 8000)   # default: resample 8k → 16k
    assert mel.shape == (math.ceil(16000 / PARAMS.hop), 80)

    strict = MelParams(resample_on_mismatch=False)
    with pytest.raises(CorpusError):
        melspectrogram(audio, strict, 8000)


def test_htk_mel_scale():
    assert hz_to_mel(0.0) == 0.0
    assert hz_to_mel(700.0) == pytest.approx(2595.0 * math.log10(2.0))
    for f in (120.0, 1000.0, 7000.0):
        assert mel_to_hz(hz_to_mel(f)) == pytest.approx(f, rel=1e-9)


def test_filterbank_shape_and_coverage():
    fb = mel_filterbank(PARAMS)
    assert fb.shape == (80, PARAMS.n_fft // 2 + 1)
    assert np.all(fb >= 0.0)
    assert np.all(fb.sum(axis=1) > 0.0)     # no empty filter


def test_values_clipped_at_floor():
    audio = (1e-9 * np.random.default_rng(4).standard_normal(4000)).astype(np.float32)
    mel = melspectrogram(audio, PARAMS, 16000)
    assert np.all(mel >= PARAMS.log_floor - 1e-12)


@given(n=st.integers(min_value=1, max_value=4000), seed=st.integers(0, 2**16))
@settings(max_examples=25, deadline=None)
def test_shape_and_finiteness_property(n, seed):
    audio = np.random.default_rng(seed).uniform(-1, 1, size=n).astype(np.float32)
    mel = melspectrogram(audio, PARAMS, 16000)
    assert mel.shape == (math.ceil(n / PARAMS.hop), 80)
    assert np.all(np.isfinite(mel))
    assert np.all(mel >= PARAMS.log_floor - 1e-12)
