"""Log-mel spectrogram extraction (HTK mel scale)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SAMPLE_RATE = 20_000
CLIP_SECONDS = 10.0
N_MELS = 80
FRAME_MS = 50.0
HOP_MS = 25.0


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, sample_rate: int) -> np.ndarray:
    """Centre frequency (Hz) of each triangular filter; filters span 0..Nyquist."""
    mels = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """(n_mels, n_fft // 2 + 1) triangular filters with unit peak."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None] - lo) / (mid - lo)
    down = (hi - freqs[None]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def frame_count(n_samples: int, hop: int) -> int:
    return n_samples // hop + 1


def minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def power_spectrogram(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Hann-windowed, reflect-centred STFT power, shape (n_fft // 2 + 1, frames)."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < n_fft:
        raise ValueError(f"clip has {len(samples)} samples, shorter than one {n_fft}-sample frame")
    padded = np.pad(samples, n_fft // 2, mode="reflect")
    frames = sliding_window_view(padded, n_fft)[::hop]
    window = np.hanning(n_fft + 1)[:-1]  # periodic Hann
    spec = np.fft.rfft(frames * window, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def mel_spectrogram(clip, n_mels: int = N_MELS, frame_ms: float = FRAME_MS,
                    hop_ms: float = HOP_MS, sample_rate: int | None = None,
                    normalize: bool = True) -> np.ndarray:
    """Mel spectrogram of a mono clip, log(1 + P) compressed and min-max scaled to [0, 1].

    At 20 kHz a 10 s clip yields 80 x 401 (1000-sample frames, 500-sample hop).
    """
    if isinstance(clip, AudioClip):
        samples, sr = clip.samples, clip.sample_rate
    else:
        samples, sr = clip, sample_rate or SAMPLE_RATE
    n_fft = int(round(sr * frame_ms / 1000.0))
    hop = int(round(sr * hop_ms / 1000.0))
    if n_fft < 2 or hop < 1:
        raise ValueError(f"frame of {frame_ms} ms / hop of {hop_ms} ms is invalid at {sr} Hz")
    power = power_spectrogram(samples, n_fft, hop)
    mel = mel_filterbank(n_mels, n_fft, sr) @ power
    logmel = np.log1p(mel)
    return minmax(logmel) if normalize else logmel


def mel_metadata(n_mels=N_MELS, frame_ms=FRAME_MS, hop_ms=HOP_MS, sample_rate=SAMPLE_RATE) -> dict:
    return {
        "sample_rate": str(sample_rate),
        "n_mels": str(n_mels),
        "frame_ms": str(frame_ms),
        "hop_ms": str(hop_ms),
        "mel_scale": "htk",
        "compression": "log1p",
        "normalization": "minmax",
    }
