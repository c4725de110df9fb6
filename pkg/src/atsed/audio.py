"""WAV ingestion and log-mel features.

Clips are made mono, resampled to 16 kHz and padded/truncated to 10 s.
Features are natural-log magnitudes of a 2048/256 Hann STFT projected on a
Slaney-style, area-normalised mel filterbank spanning 0-8 kHz.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

SAMPLE_RATE = 16000
CLIP_SECONDS = 10.0
CLIP_SAMPLES = int(SAMPLE_RATE * CLIP_SECONDS)
N_FFT = 2048
HOP = 256
F_MAX = 8000.0
LOG_FLOOR = 1e-10
RESAMPLE_TAPS_PER_PHASE = 64


class AudioError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    rate: int = SAMPLE_RATE


@dataclass
class LogMel:
    frames: np.ndarray  # T x M
    frame_hop_s: float = HOP / SAMPLE_RATE

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def _decode_pcm(raw: bytes, width: int) -> np.ndarray:
    if width == 1:
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if width == 2:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        return v.astype(np.float64) / float(1 << 23)
    raise AudioError(f"unsupported sample width: {8 * width} bits (need 8, 16 or 24)")


def read_wav(path) -> tuple:
    """Return ``(samples [n, channels], rate)`` for a PCM WAV file."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate, n = fh.getnchannels(), fh.getsampwidth(), fh.getframerate(), fh.getnframes()
            raw = fh.readframes(n)
    except wave.Error as exc:
        raise AudioError(f"{path}: not a PCM WAV file ({exc}); format tag must be PCM") from exc
    except (EOFError, OSError) as exc:
        raise AudioError(f"{path}: unreadable audio file ({exc})") from exc
    if channels not in (1, 2):
        raise AudioError(f"{path}: unsupported channel count {channels} (need 1 or 2)")
    data = _decode_pcm(raw, width)
    return data.reshape(-1, channels), rate


def resample(x: np.ndarray, rate_in: int, rate_out: int = SAMPLE_RATE) -> np.ndarray:
    """Polyphase windowed-sinc resampling with 64 taps per phase."""
    if rate_in == rate_out:
        return x
    ratio = Fraction(rate_out, rate_in)
    up, down = ratio.numerator, ratio.denominator
    numtaps = RESAMPLE_TAPS_PER_PHASE * max(up, down) + 1
    taps = signal.firwin(numtaps, 1.0 / max(up, down), window=("kaiser", 8.0))
    return signal.resample_poly(x, up, down, window=taps, padtype="edge")


def fit_length(x: np.ndarray, n: int = CLIP_SAMPLES) -> np.ndarray:
    if len(x) >= n:
        return x[:n]
    return np.concatenate([x, np.zeros(n - len(x), dtype=x.dtype)])


def load_audio(path) -> Waveform:
    data, rate = read_wav(path)
    mono = data.mean(axis=1)
    mono = resample(mono, rate)
    return Waveform(fit_length(mono), SAMPLE_RATE)


def write_wav(path, samples: np.ndarray, rate: int = SAMPLE_RATE) -> None:
    """Write mono 16-bit PCM."""
    pcm = np.clip(np.round(samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


# -- mel scale (Slaney: linear below 1 kHz, logarithmic above) -------------

_F_SP = 200.0 / 3
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = np.log(6.4) / 27.0


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    lin = f / _F_SP
    log = _MIN_LOG_MEL + np.log(np.maximum(f, _MIN_LOG_HZ) / _MIN_LOG_HZ) / _LOGSTEP
    return np.where(f >= _MIN_LOG_HZ, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    lin = _F_SP * m
    log = _MIN_LOG_HZ * np.exp(_LOGSTEP * (m - _MIN_LOG_MEL))
    return np.where(m >= _MIN_LOG_MEL, log, lin)


def mel_band_edges(n_mels: int, fmin: float = 0.0, fmax: float = F_MAX) -> np.ndarray:
    """``n_mels + 2`` frequencies (Hz): lower edge, centres, upper edge."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(n_mels: int, n_fft: int = N_FFT, sr: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float = F_MAX) -> np.ndarray:
    """Triangular, area-normalised filters, shape ``n_mels x (n_fft // 2 + 1)``."""
    if not isinstance(n_mels, (int, np.integer)) or n_mels <= 0:
        raise ValueError(f"n_mels must be a positive int, got {n_mels!r}")
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sr)
    edges = mel_band_edges(n_mels, fmin, fmax)
    widths = np.diff(edges)
    ramps = edges[:, None] - freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


def stft_magnitude(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Centre-padded (reflect) Hann STFT magnitudes, ``frames x bins``."""
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (len(xp) - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop][:n_frames]
    window = signal.get_window("hann", n_fft, fftbins=True)
    return np.abs(np.fft.rfft(frames * window, axis=1))


_FB_CACHE: dict = {}


def logmel(w: Waveform, n_mels: int) -> LogMel:
    if not isinstance(n_mels, (int, np.integer)) or isinstance(n_mels, bool) or n_mels <= 0:
        raise ValueError(f"n_mels must be a positive int, got {n_mels!r}")
    if w.rate != SAMPLE_RATE:
        raise AudioError(f"expected {SAMPLE_RATE} Hz waveform, got {w.rate}")
    fb = _FB_CACHE.get(n_mels)
    if fb is None:
        fb = _FB_CACHE[n_mels] = mel_filterbank(int(n_mels))
    mag = stft_magnitude(np.asarray(w.samples, dtype=np.float64))
    mel = mag @ fb.T
    return LogMel(np.log(np.maximum(mel, LOG_FLOOR)), HOP / SAMPLE_RATE)
