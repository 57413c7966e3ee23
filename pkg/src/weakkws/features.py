"""64-bin log-Mel front-end and batch-wise zero padding."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import AudioClip

SAMPLE_RATE = 16000
N_FFT = 512
WIN_LENGTH = 512  # 32 ms
HOP_LENGTH = 160  # 10 ms
N_MELS = 64
LOG_FLOOR = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT) -> np.ndarray:
    """Un-normalised HTK triangles between 0 Hz and Nyquist, shape (n_mels, n_fft//2+1)."""
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs - lo) / (mid - lo)
    fall = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rise, fall))


@lru_cache(maxsize=None)
def _shared_filterbank():
    fb = mel_filterbank()
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=None)
def _window():
    # periodic Hann
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(WIN_LENGTH) / WIN_LENGTH)
    w.setflags(write=False)
    return w


def num_frames(num_samples: int) -> int:
    if num_samples < WIN_LENGTH:
        raise ValueError(f"clip of {num_samples} samples is shorter than one window")
    return 1 + (num_samples - WIN_LENGTH) // HOP_LENGTH


@dataclass
class LogMelSpectrogram:
    frames: np.ndarray  # (T, 64)
    frame_hop_s: float = HOP_LENGTH / SAMPLE_RATE
    window_s: float = WIN_LENGTH / SAMPLE_RATE

    def __len__(self):
        return self.frames.shape[0]


def log_mel(clip: AudioClip) -> LogMelSpectrogram:
    if clip.sample_rate != SAMPLE_RATE:
        raise ValueError(f"log_mel expects {SAMPLE_RATE} Hz audio, got {clip.sample_rate}")
    n = num_frames(len(clip))
    frames = sliding_window_view(clip.samples, WIN_LENGTH)[::HOP_LENGTH][:n]
    power = np.abs(np.fft.rfft(frames * _window(), n=N_FFT, axis=1)) ** 2
    mel = power @ _shared_filterbank().T
    return LogMelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)))


@dataclass
class Batch:
    data: np.ndarray  # (B, T_max, n_mels)
    lengths: list
    labels: list

    def __len__(self):
        return self.data.shape[0]


def pad_batch(items) -> Batch:
    """Stack (spectrogram, label) pairs, zero-padding to the longest one."""
    items = list(items)
    if not items:
        raise ValueError("cannot batch an empty list")
    mats = [it[0].frames if isinstance(it[0], LogMelSpectrogram) else np.asarray(it[0]) for it in items]
    lengths = [m.shape[0] for m in mats]
    dtype = np.result_type(*mats)
    data = np.zeros((len(mats), max(lengths), mats[0].shape[1]), dtype=dtype)
    for i, m in enumerate(mats):
        data[i, : m.shape[0]] = m
    return Batch(data, lengths, [int(it[1]) for it in items])


def spectrogram_csv(spec: LogMelSpectrogram) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row) for row in spec.frames) + "\n"
