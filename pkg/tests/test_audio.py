import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atsed.audio import (CLIP_SAMPLES, HOP, LOG_FLOOR, N_FFT, SAMPLE_RATE, AudioError, Waveform,
                         hz_to_mel, load_audio, logmel, mel_band_edges, mel_filterbank, mel_to_hz,
                         read_wav, stft_magnitude, write_wav)


def write_pcm(path, data, rate, width):
    """Write ``data`` (n x channels, in [-1, 1)) as integer PCM of ``width`` bytes."""
    data = np.atleast_2d(data.T).T
    if width == 1:
        raw = np.clip(np.round(data * 128 + 128), 0, 255).astype(np.uint8).tobytes()
    elif width == 2:
        raw = np.round(data * 32768).clip(-32768, 32767).astype("<i2").tobytes()
    else:
        v = np.round(data * (1 << 23)).clip(-(1 << 23), (1 << 23) - 1).astype(np.int64).reshape(-1)
        v = np.where(v < 0, v + (1 << 24), v)
        raw = np.stack([v & 255, (v >> 8) & 255, (v >> 16) & 255], axis=1).astype(np.uint8).tobytes()
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(data.shape[1])
        fh.setsampwidth(width)
        fh.setframerate(rate)
        fh.writeframes(raw)


def tone(freq, seconds=10.0, amp=0.5):
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    return amp * np.sin(2 * np.pi * freq * t)


# -- ingestion ----------------------------------------------------------------

def test_exact_length_16k_mono_unchanged(tmp_path):
    x = np.random.default_rng(0).uniform(-0.9, 0.9, CLIP_SAMPLES)
    x = np.round(x * 32768) / 32768
    write_pcm(tmp_path / "a.wav", x, SAMPLE_RATE, 2)
    w = load_audio(tmp_path / "a.wav")
    assert w.rate == SAMPLE_RATE and len(w.samples) == CLIP_SAMPLES
    np.testing.assert_array_equal(w.samples, x)


def test_short_clip_padded_with_exact_zeros(tmp_path):
    write_pcm(tmp_path / "a.wav", tone(440, 4.0), SAMPLE_RATE, 2)
    w = load_audio(tmp_path / "a.wav")
    assert len(w.samples) == CLIP_SAMPLES
    assert np.all(w.samples[4 * SAMPLE_RATE:] == 0.0)
    assert np.any(w.samples[:4 * SAMPLE_RATE] != 0.0)


def test_long_clip_truncated(tmp_path):
    write_pcm(tmp_path / "a.wav", tone(440, 12.0), SAMPLE_RATE, 2)
    assert len(load_audio(tmp_path / "a.wav").samples) == CLIP_SAMPLES


def test_stereo_44k_constant_preserves_dc(tmp_path):
    data = np.full((44100 * 10, 2), 0.5)
    write_pcm(tmp_path / "a.wav", data, 44100, 2)
    w = load_audio(tmp_path / "a.wav")
    assert len(w.samples) == CLIP_SAMPLES
    assert np.max(np.abs(w.samples - 0.5)) < 1e-3


@pytest.mark.parametrize("width", [1, 2, 3])
def test_sample_widths_decode(tmp_path, width):
    x = np.array([0.0, 0.25, -0.5, 0.75, -1.0])
    write_pcm(tmp_path / "a.wav", x, SAMPLE_RATE, width)
    data, rate = read_wav(tmp_path / "a.wav")
    assert rate == SAMPLE_RATE and data.shape == (5, 1)
    np.testing.assert_allclose(data[:, 0], x, atol=1.0 / 127)


def test_stereo_channels_averaged(tmp_path):
    data = np.stack([np.full(100, 0.5), np.full(100, -0.25)], axis=1)
    write_pcm(tmp_path / "a.wav", data, SAMPLE_RATE, 2)
    np.testing.assert_allclose(load_audio(tmp_path / "a.wav").samples[:100], 0.125, atol=1e-4)


def test_non_wav_names_problem(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(b"ID3\x03not audio at all" * 10)
    with pytest.raises(AudioError, match="PCM"):
        load_audio(p)


def test_unsupported_channels(tmp_path):
    p = tmp_path / "x.wav"
    with wave.open(str(p), "wb") as fh:
        fh.setnchannels(3)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(np.zeros(30, dtype="<i2").tobytes())
    with pytest.raises(AudioError, match="channel"):
        load_audio(p)


def test_write_wav_roundtrip(tmp_path):
    x = tone(300, 1.0, 0.3)
    write_wav(tmp_path / "a.wav", x)
    data, rate = read_wav(tmp_path / "a.wav")
    np.testing.assert_allclose(data[:, 0], x, atol=1.0 / 32767)


# -- mel scale and filterbank ---------------------------------------------------

def test_slaney_mel_reference_points():
    # linear part: 200/3 Hz per mel; 1 kHz is mel 15; log part: 6.4x per 27 mels
    np.testing.assert_allclose(hz_to_mel([0.0, 200 / 3, 1000.0, 6400.0]), [0.0, 1.0, 15.0, 42.0], atol=1e-12)
    f = np.linspace(0, 8000, 101)
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)


def naive_filterbank(n_mels):
    freqs = np.arange(N_FFT // 2 + 1) * SAMPLE_RATE / N_FFT
    edges = mel_band_edges(n_mels)
    fb = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        for k, f in enumerate(freqs):
            if lo < f <= c:
                fb[m, k] = (f - lo) / (c - lo)
            elif c < f < hi:
                fb[m, k] = (hi - f) / (hi - c)
        fb[m] *= 2.0 / (hi - lo)
    return fb


@pytest.mark.parametrize("n_mels", [64, 128])
def test_filterbank_matches_naive_construction(n_mels):
    np.testing.assert_allclose(mel_filterbank(n_mels), naive_filterbank(n_mels), atol=1e-12)


@pytest.mark.parametrize("n_mels", [64, 128])
def test_filterbank_column_sums_bounded(n_mels):
    sums = mel_filterbank(n_mels).sum(axis=0)
    freqs = np.fft.rfftfreq(N_FFT, 1 / SAMPLE_RATE)
    inside = (freqs > 0) & (freqs < 8000)
    assert np.all(sums[inside] > 0) and np.all(sums <= 1.0001)


@pytest.mark.parametrize("bad", [0, -3, 2.5, "64"])
def test_bad_n_mels(bad):
    with pytest.raises(ValueError):
        logmel(Waveform(np.zeros(CLIP_SAMPLES)), bad)


# -- log-mel --------------------------------------------------------------------

def test_stft_matches_framewise_loop():
    x = np.random.default_rng(1).normal(size=6000)
    got = stft_magnitude(x)
    xp = np.pad(x, N_FFT // 2, mode="reflect")
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(N_FFT) / N_FFT)
    n = 1 + (len(xp) - N_FFT) // HOP
    assert got.shape == (n, N_FFT // 2 + 1)
    for i in (0, 3, n - 1):
        ref = np.abs(np.fft.rfft(xp[i * HOP:i * HOP + N_FFT] * win))
        np.testing.assert_allclose(got[i], ref, atol=1e-9)


def test_shape_for_ten_second_clip():
    lm = logmel(Waveform(tone(500)), 128)
    assert lm.frames.shape == (626, 128) == (1 + CLIP_SAMPLES // HOP, 128)
    assert lm.frame_hop_s == HOP / SAMPLE_RATE
    assert np.all(np.isfinite(lm.frames))


def test_silence_is_log_floor():
    lm = logmel(Waveform(np.zeros(CLIP_SAMPLES)), 64)
    assert np.all(lm.frames == np.log(LOG_FLOOR))


def test_tone_peaks_at_nearest_centre():
    lm = logmel(Waveform(tone(1000.0)), 128)
    centres = mel_band_edges(128)[1:-1]
    expected = int(np.argmin(np.abs(centres - 1000.0)))
    assert np.all(np.argmax(lm.frames, axis=1) == expected)


def test_deterministic_bits():
    x = np.random.default_rng(3).normal(scale=0.1, size=CLIP_SAMPLES)
    assert logmel(Waveform(x), 64).frames.tobytes() == logmel(Waveform(x.copy()), 64).frames.tobytes()


@settings(max_examples=10, deadline=None)
@given(st.floats(1.01, 20.0), st.integers(0, 10_000))
def test_scaling_up_never_decreases(c, seed):
    x = np.random.default_rng(seed).normal(scale=0.05, size=CLIP_SAMPLES)
    a = logmel(Waveform(x), 64).frames
    b = logmel(Waveform(c * x), 64).frames
    assert np.all(b >= a - 1e-12)
