"""Synthesis of the clean / weak / weak_snr / weak_pos dataset variants.

A keyword corpus in Speech Commands layout plus a directory of noise clips
go in; one WAV per record and a JSON-Lines manifest come out.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .audio_io import AudioClip, load_mono, rms_power, save_wav

log = logging.getLogger(__name__)

KEYWORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
UNKNOWN = len(KEYWORDS)
NUM_CLASSES = UNKNOWN + 1
CLASS_NAMES = KEYWORDS + ("unknown",)
VARIANTS = ("clean", "weak", "weak_snr", "weak_pos")
SPLITS = ("train", "validation", "test")
MANIFEST_NAME = "manifest.jsonl"


class DegenerateSNRError(ValueError):
    """SNR cannot be realised because one of the two powers is zero."""


class SynthError(RuntimeError):
    """A single record failed; the message names the record."""


def map_label(keyword_name: str) -> int:
    if not keyword_name:
        raise ValueError("empty keyword name")
    try:
        return KEYWORDS.index(keyword_name)
    except ValueError:
        return UNKNOWN


@dataclass
class SynthConfig:
    variant: str
    keyword_dir: str
    out_dir: str
    noise_dir: str | None = None
    target_seconds: float = 3.0
    snr_db: float | None = None
    sample_rate: int = 16000
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if (self.snr_db is not None) != (self.variant == "weak_snr"):
            raise ValueError("snr_db is required for weak_snr and only for weak_snr")
        if self.variant != "clean" and self.noise_dir is None:
            raise ValueError(f"variant {self.variant} needs a noise_dir")
        if self.target_seconds <= 0:
            raise ValueError("target_seconds must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        self.sample_rate = int(self.sample_rate)
        self.target_seconds = float(self.target_seconds)
        if self.snr_db is not None:
            self.snr_db = float(self.snr_db)

    @property
    def t_samples(self) -> int:
        return int(round(self.target_seconds * self.sample_rate))


@dataclass
class SampleRecord:
    out_path: str
    label: int
    split: str
    source_keyword: str
    source_noise: str | None
    offset_samples: int
    snr_db: float | None
    seed: int
    keyword_samples: int = 0
    noise_start: int = 0
    noise_gain: float | None = None
    peak_scale: float = 1.0

    def __post_init__(self):
        if not 0 <= self.label < NUM_CLASSES:
            raise ValueError(f"label {self.label} outside 0..{NUM_CLASSES - 1}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class DatasetManifest:
    records: list
    config: dict
    root: Path = Path(".")

    def resolve(self, rel) -> Path:
        return self.root / rel

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def write(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records:
                fh.write(json.dumps(asdict(rec)) + "\n")
            fh.write(json.dumps({"config": self.config}) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        names = {f.name for f in fields(SampleRecord)}
        records, config = [], None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                if "config" in obj and len(obj) == 1:
                    config = obj["config"]
                    continue
                unknown = set(obj) - names
                if unknown:
                    raise ValueError(f"{path}:{lineno}: unknown fields {sorted(unknown)}")
                records.append(SampleRecord(**obj))
        return cls(records, config or {}, path.parent)


# ---------------------------------------------------------------- primitives


def sample_offset(rng: np.random.Generator, t_samples: int, L_samples: int) -> int:
    """Uniform integer insertion point on [0, t_samples - L_samples]."""
    if L_samples > t_samples:
        raise ValueError(f"keyword ({L_samples}) longer than target ({t_samples})")
    return int(rng.integers(0, t_samples - L_samples, endpoint=True))


def _loop(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) == 0:
        raise ValueError("empty noise clip")
    if len(x) >= n:
        return x[:n].copy()
    return np.resize(x, n)


def _check_geometry(keyword: AudioClip, noise: AudioClip, offset: int, t_samples: int):
    if keyword.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample rate mismatch: keyword {keyword.sample_rate}, noise {noise.sample_rate}"
        )
    if offset < 0 or offset + len(keyword) > t_samples:
        raise ValueError(
            f"keyword of {len(keyword)} samples at offset {offset} exceeds {t_samples}"
        )


def splice_no_overlap(keyword: AudioClip, noise: AudioClip, offset: int, t_samples: int) -> AudioClip:
    """Overwrite the keyword into a t_samples noise bed; nothing is summed."""
    _check_geometry(keyword, noise, offset, t_samples)
    out = _loop(noise.samples, t_samples)
    out[offset : offset + len(keyword)] = keyword.samples
    return AudioClip(out, keyword.sample_rate)


def snr_mix_gain(keyword: AudioClip, noise: AudioClip, offset: int, t_samples: int, snr_db: float) -> float:
    """Noise gain that realises ``snr_db`` over the keyword interval."""
    _check_geometry(keyword, noise, offset, t_samples)
    bed = _loop(noise.samples, t_samples)
    p_noise = rms_power(bed[offset : offset + len(keyword)])
    p_kw = rms_power(keyword)
    if p_noise == 0.0 or p_kw == 0.0:
        raise DegenerateSNRError("silent keyword or silent noise under the keyword")
    return float(np.sqrt(p_kw / (p_noise * 10.0 ** (snr_db / 10.0))))


def _mix(keyword, noise, offset, t_samples, snr_db):
    gain = snr_mix_gain(keyword, noise, offset, t_samples, snr_db)
    out = gain * _loop(noise.samples, t_samples)
    out[offset : offset + len(keyword)] += keyword.samples
    peak = float(np.max(np.abs(out)))
    scale = 1.0 / peak if peak > 1.0 else 1.0
    if scale != 1.0:
        out *= scale
    return out, gain, scale


def mix_snr(keyword: AudioClip, noise: AudioClip, offset: int, t_samples: int, snr_db: float) -> AudioClip:
    """Add the keyword on top of gain-adjusted noise at ``snr_db``.

    If the sum exceeds full scale, the whole clip is divided by its peak so the
    realised SNR is untouched.
    """
    out, _, _ = _mix(keyword, noise, offset, t_samples, snr_db)
    return AudioClip(out, keyword.sample_rate)


def gen_noise(kind: str, seconds: float, sample_rate: int, seed: int) -> AudioClip:
    """White or pink (-3 dB/octave) Gaussian noise with RMS amplitude 0.1."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    n = int(round(seconds * sample_rate))
    g = rngmod.stream(seed)
    x = g.standard_normal(n)
    if kind == "pink":
        spec = np.fft.rfft(x)
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        shape = np.zeros_like(f)
        shape[1:] = 1.0 / np.sqrt(f[1:])
        x = np.fft.irfft(spec * shape, n)
    elif kind != "white":
        raise ValueError(f"unknown noise kind {kind!r}")
    x = x - x.mean()
    x *= 0.1 / np.sqrt(np.mean(x**2))
    return AudioClip(x, sample_rate)


# ------------------------------------------------------------------- corpora


def scan_keyword_corpus(keyword_dir) -> list:
    """List (relative path, label, split) for a Speech Commands style tree.

    Folders starting with ``_`` (background noise) are ignored. Split
    membership comes from validation_list.txt / testing_list.txt; the rest is
    train.
    """
    root = Path(keyword_dir)

    def read_list(name):
        p = root / name
        if not p.exists():
            return set()
        return {ln.strip() for ln in p.read_text().splitlines() if ln.strip()}

    val, test = read_list("validation_list.txt"), read_list("testing_list.txt")
    out = []
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        if folder.name.startswith("_"):
            continue
        label = map_label(folder.name)
        for wav in sorted(folder.glob("*.wav")):
            rel = wav.relative_to(root).as_posix()
            split = "test" if rel in test else "validation" if rel in val else "train"
            out.append((rel, label, split))
    return out


def list_noise(noise_dir) -> list:
    return sorted(p.relative_to(noise_dir).as_posix() for p in Path(noise_dir).rglob("*.wav"))


@lru_cache(maxsize=64)
def _cached_clip(path: str, sample_rate: int) -> AudioClip:
    return load_mono(path, sample_rate)


# ------------------------------------------------------------------ builder


def _record_mode(variant: str, split: str, label: int) -> str:
    if split == "test" or variant == "clean":
        return "clean"
    if variant == "weak_pos":
        return "weak" if label != UNKNOWN else "clean"
    return variant


def _rel(path, start) -> str:
    return Path(os.path.relpath(Path(path).resolve(), Path(start).resolve())).as_posix()


def _synth_one(config: SynthConfig, index: int, entry, noise_paths) -> SampleRecord:
    kw_rel, label, split = entry
    kw_path = Path(config.keyword_dir) / kw_rel
    out_root = Path(config.out_dir)
    try:
        out_rel = Path(kw_path).resolve().relative_to(Path(config.keyword_dir).resolve())
    except ValueError:
        out_rel = Path(f"{index:07d}_{Path(kw_rel).name}")
    out_path = out_root / "audio" / out_rel
    out_path.parent.mkdir(parents=True, exist_ok=True)

    keyword = load_mono(kw_path, config.sample_rate)
    seed = rngmod.derive_seed(config.seed, index)
    rec = SampleRecord(
        out_path=_rel(out_path, out_root),
        label=int(label),
        split=split,
        source_keyword=_rel(kw_path, out_root),
        source_noise=None,
        offset_samples=0,
        snr_db=None,
        seed=seed,
        keyword_samples=len(keyword),
    )
    mode = _record_mode(config.variant, split, label)
    if mode == "clean":
        save_wav(keyword, out_path)
        return rec

    t = config.t_samples
    g = rngmod.stream(seed)
    noise_rel = noise_paths[int(g.integers(len(noise_paths)))]
    noise_path = Path(config.noise_dir) / noise_rel
    noise = _cached_clip(str(noise_path), config.sample_rate)
    start = int(g.integers(0, len(noise) - t, endpoint=True)) if len(noise) > t else 0
    noise = AudioClip(noise.samples[start : start + t], config.sample_rate)
    offset = sample_offset(g, t, len(keyword))
    rec.source_noise = _rel(noise_path, out_root)
    rec.noise_start = start
    rec.offset_samples = offset

    if mode == "weak":
        clip = splice_no_overlap(keyword, noise, offset, t)
    else:
        samples, gain, scale = _mix(keyword, noise, offset, t, config.snr_db)
        clip = AudioClip(samples, config.sample_rate)
        rec.snr_db = config.snr_db
        rec.noise_gain = gain
        rec.peak_scale = scale
    save_wav(clip, out_path)
    return rec


def _synth_safe(args):
    config, index, entry, noise_paths, strict = args
    try:
        return _synth_one(config, index, entry, noise_paths)
    except Exception as exc:
        msg = f"record {index} ({entry[0]}): {exc}"
        if strict:
            raise SynthError(msg) from exc
        log.warning("skipping %s", msg)
        return None


def config_echo(config: SynthConfig) -> dict:
    out = asdict(config)
    for key in ("keyword_dir", "noise_dir", "out_dir"):
        if out[key] is not None:
            out[key] = _rel(out[key], config.out_dir)
    return out


def build_dataset(config: SynthConfig, keyword_manifest, noise_paths=(), *, strict=True, jobs=1) -> DatasetManifest:
    """Synthesize every record and write ``<out_dir>/manifest.jsonl``.

    ``keyword_manifest`` holds (path, label, split) with paths relative to
    ``config.keyword_dir``; ``noise_paths`` are relative to ``config.noise_dir``.
    Test-split records are always passed through clean.
    """
    keyword_manifest = list(keyword_manifest)
    noise_paths = list(noise_paths)
    if not keyword_manifest:
        raise ValueError("empty keyword manifest")
    if config.variant != "clean" and not noise_paths:
        raise ValueError(f"variant {config.variant} needs at least one noise clip")
    Path(config.out_dir).mkdir(parents=True, exist_ok=True)

    tasks = [(config, i, e, noise_paths, strict) for i, e in enumerate(keyword_manifest)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_synth_safe, tasks, chunksize=64))
    else:
        results = [_synth_safe(t) for t in tasks]

    records = [r for r in results if r is not None]
    if len(records) < len(results):
        log.warning("%d of %d records skipped", len(results) - len(records), len(results))
    manifest = DatasetManifest(records, config_echo(config), Path(config.out_dir))
    manifest.write(Path(config.out_dir) / MANIFEST_NAME)
    return manifest
