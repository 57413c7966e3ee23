"""WAV decode/encode, resampling and power measurement for mono clips."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import firwin, resample_poly

PCM16_SCALE = 32768.0
RESAMPLE_TAPS_PER_PHASE = 64
KAISER_BETA = 8.6

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


class WavDecodeError(ValueError):
    """Malformed RIFF/WAVE container."""


class UnsupportedFormatError(WavDecodeError):
    """Valid container, but an encoding this reader does not handle."""


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioClip holds mono samples only")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        yield cid, size, body
        pos += 8 + size + (size & 1)


def load_wav(path) -> AudioClip:
    """Read a PCM16 or float32 WAV file and downmix it to mono."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavDecodeError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    for cid, size, body in _iter_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavDecodeError(f"{path}: short fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise WavDecodeError(f"{path}: short extensible fmt chunk")
                subformat = struct.unpack_from("<H", body, 24)[0]
                fmt = (subformat,) + fmt[1:]
        elif cid == b"data":
            if len(body) < size:
                raise WavDecodeError(
                    f"{path}: data chunk truncated ({len(body)} of {size} bytes)"
                )
            pcm = body
    if fmt is None:
        raise WavDecodeError(f"{path}: missing fmt chunk")
    if pcm is None:
        raise WavDecodeError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate <= 0:
        raise WavDecodeError(f"{path}: bad channel count or sample rate")
    if tag == _FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / PCM16_SCALE
    elif tag == _FORMAT_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported encoding (format tag {tag:#06x}, {bits} bits)"
        )
    frame_bytes = dtype.itemsize * channels
    n_frames = len(pcm) // frame_bytes
    raw = np.frombuffer(pcm[: n_frames * frame_bytes], dtype=dtype)
    frames = raw.reshape(n_frames, channels).astype(np.float64) * scale
    return AudioClip(frames.mean(axis=1) if channels > 1 else frames[:, 0], rate)


def save_wav(clip: AudioClip, path) -> None:
    """Write a mono PCM16 WAV; amplitudes are clamped to full scale here only."""
    if len(clip) == 0:
        raise ValueError("cannot write an empty clip")
    ints = np.clip(np.round(clip.samples * PCM16_SCALE), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    fmt = struct.pack("<HHIIHH", _FORMAT_PCM, 1, clip.sample_rate, 2 * clip.sample_rate, 2, 16)
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVEfmt " + struct.pack("<I", 16) + fmt
    with open(path, "wb") as fh:
        fh.write(header + b"data" + struct.pack("<I", len(payload)) + payload)


def _design_filter(up: int, down: int) -> np.ndarray:
    # odd length keeps the filter delay on an integer sample
    numtaps = RESAMPLE_TAPS_PER_PHASE * max(up, down) + 1
    return firwin(numtaps, 1.0 / max(up, down), window=("kaiser", KAISER_BETA))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase windowed-sinc resampling to ``target_rate``.

    Output length is ``round(len * target_rate / source_rate)``.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    source_rate = clip.sample_rate
    if target_rate == source_rate:
        return AudioClip(clip.samples.copy(), source_rate)

    g = math.gcd(target_rate, source_rate)
    up, down = target_rate // g, source_rate // g
    n_out = (2 * len(clip) * target_rate + source_rate) // (2 * source_rate)
    y = resample_poly(clip.samples, up, down, window=_design_filter(up, down))
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    return AudioClip(y, target_rate)


def rms_power(clip) -> float:
    """Mean squared amplitude. Accepts an AudioClip or a bare sample array."""
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, np.float64)
    if x.size == 0:
        raise ValueError("rms_power of an empty clip is undefined")
    return float(np.mean(np.square(x)))


def load_mono(path, sample_rate: int) -> AudioClip:
    """load_wav followed by resampling to ``sample_rate`` when needed."""
    clip = load_wav(path)
    if clip.sample_rate != sample_rate:
        clip = resample(clip, sample_rate)
    return clip
