import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from weakkws.audio_io import (
    AudioClip,
    UnsupportedFormatError,
    WavDecodeError,
    load_wav,
    resample,
    rms_power,
    save_wav,
)


def _write_raw_wav(path, payload: bytes, tag: int, channels: int, rate: int, bits: int, declared=None):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    size = len(payload) if declared is None else declared
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", size) + payload
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_one_second_pcm16(tmp_path):
    p = tmp_path / "a.wav"
    save_wav(AudioClip(np.zeros(16000), 16000), p)
    clip = load_wav(p)
    assert len(clip) == 16000 and clip.sample_rate == 16000
    assert clip.duration == 1.0


def test_zeros_encode_to_zero_frames(tmp_path):
    p = tmp_path / "z.wav"
    save_wav(AudioClip(np.zeros(100), 8000), p)
    assert p.read_bytes()[-200:] == b"\x00" * 200


def test_full_scale_saturates(tmp_path):
    p = tmp_path / "f.wav"
    save_wav(AudioClip(np.array([1.0, -1.0, 1.7]), 16000), p)
    assert np.frombuffer(p.read_bytes()[-6:], "<i2").tolist() == [32767, -32768, 32767]


def test_stereo_is_averaged(tmp_path):
    p = tmp_path / "s.wav"
    frames = np.array([[1000, 3000], [-2000, 0], [32767, -32768]], dtype="<i2")
    _write_raw_wav(p, frames.tobytes(), 1, 2, 16000, 16)
    clip = load_wav(p)
    np.testing.assert_array_equal(clip.samples, frames.astype(float).mean(axis=1) / 32768)


def test_float32(tmp_path):
    x = np.array([0.5, -0.25, 0.125], dtype="<f4")
    p = tmp_path / "f.wav"
    _write_raw_wav(p, x.tobytes(), 3, 1, 22050, 32)
    clip = load_wav(p)
    assert clip.sample_rate == 22050
    np.testing.assert_array_equal(clip.samples, x)


def test_extensible_pcm16_stereo(tmp_path):
    left = np.array([1000, -2000, 3000], dtype="<i2")
    right = np.array([3000, 0, -1000], dtype="<i2")
    payload = np.stack([left, right], 1).tobytes()
    base = struct.pack("<HHIIHH", 0xFFFE, 2, 16000, 16000 * 4, 4, 16)
    # cbSize, valid bits, channel mask, then the subformat GUID (PCM)
    ext = struct.pack("<HHI", 22, 16, 3) + struct.pack("<H", 1) + b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"
    fmt = base + ext
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    p = tmp_path / "x.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    clip = load_wav(p)
    np.testing.assert_allclose(clip.samples, (left.astype(float) + right) / 2 / 32768, rtol=0, atol=1e-15)


def test_truncated_data_chunk(tmp_path):
    p = tmp_path / "t.wav"
    _write_raw_wav(p, b"\x00\x01" * 10, 1, 1, 16000, 16, declared=400)
    with pytest.raises(WavDecodeError):
        load_wav(p)


def test_not_riff(tmp_path):
    p = tmp_path / "n.wav"
    p.write_bytes(b"hello world, not audio")
    with pytest.raises(WavDecodeError):
        load_wav(p)


def test_unsupported_encoding(tmp_path):
    p = tmp_path / "u.wav"
    _write_raw_wav(p, b"\x00" * 12, 1, 1, 16000, 24)
    with pytest.raises(UnsupportedFormatError):
        load_wav(p)


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_wav(AudioClip(np.zeros(4), 16000), tmp_path / "missing" / "x.wav")


def test_sine_round_trip(tmp_path):
    t = np.arange(16000) / 16000
    clip = AudioClip(0.8 * np.sin(2 * np.pi * 440 * t), 16000)
    p = tmp_path / "sine.wav"
    save_wav(clip, p)
    assert np.max(np.abs(load_wav(p).samples - clip.samples)) <= 1 / 32768


@given(arrays(np.float64, st.integers(1, 400), elements=st.floats(-1.0, 1.0)))
def test_round_trip_within_one_lsb(tmp_path_factory, x):
    p = tmp_path_factory.mktemp("rt") / "x.wav"
    save_wav(AudioClip(x, 16000), p)
    assert np.max(np.abs(load_wav(p).samples - x)) <= 1 / 32768


def test_resample_identity_is_bitwise():
    x = np.random.default_rng(0).uniform(-1, 1, 1234)
    out = resample(AudioClip(x, 16000), 16000)
    assert out.samples.tobytes() == x.tobytes()


@pytest.mark.parametrize("src,dst,n", [(8000, 16000, 8000), (48000, 16000, 48000), (44100, 16000, 44100), (16000, 22050, 1001)])
def test_resample_length(src, dst, n):
    out = resample(AudioClip(np.zeros(n), src), dst)
    assert len(out) == int(np.floor(n * dst / src + 0.5))
    assert out.sample_rate == dst


def test_resample_preserves_low_sine():
    # reference sine generated analytically at the target rate
    src = np.sin(2 * np.pi * 100 * np.arange(48000) / 48000)
    out = resample(AudioClip(src, 48000), 16000)
    ref = np.sin(2 * np.pi * 100 * np.arange(16000) / 16000)
    assert np.corrcoef(out.samples, ref)[0, 1] > 0.999


def test_resample_rejects_bad_rate():
    with pytest.raises(ValueError):
        resample(AudioClip(np.zeros(10), 16000), 0)


def test_rms_power_values():
    assert rms_power(AudioClip(np.zeros(10), 16000)) == 0.0
    assert rms_power(AudioClip(np.full(10, 0.5), 16000)) == 0.25
    assert rms_power(AudioClip(np.tile([1.0, -1.0], 50), 16000)) == 1.0
    with pytest.raises(ValueError):
        rms_power(AudioClip(np.zeros(0), 16000))


@given(
    arrays(np.float64, st.integers(1, 200), elements=st.floats(-1.0, 1.0)),
    st.floats(-20.0, 20.0),
)
def test_rms_power_scales_quadratically(x, k):
    p = rms_power(AudioClip(x, 16000))
    assert rms_power(AudioClip(k * x, 16000)) == pytest.approx(k * k * p, rel=1e-12, abs=1e-300)
