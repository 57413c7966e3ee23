"""Procedural stand-in for a Speech Commands style corpus.

Each word is two voiced "syllables" with word-specific formant pairs; the
speaker (pitch, formant shift, tempo, loudness) varies per utterance. The
result is small, deterministic, and learnable, which is all the smoke and
capacity runs need.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import rng as rngmod
from .audio_io import AudioClip, save_wav
from .synth import KEYWORDS

VOWELS = {
    "i": (270, 2290),
    "e": (530, 1840),
    "ae": (660, 1720),
    "a": (730, 1090),
    "o": (570, 840),
    "u": (300, 870),
    "er": (490, 1350),
}

WORD_VOWELS = {
    "yes": ("i", "e"),
    "no": ("o", "u"),
    "up": ("er", "a"),
    "down": ("a", "u"),
    "left": ("e", "er"),
    "right": ("a", "i"),
    "on": ("a", "o"),
    "off": ("o", "er"),
    "stop": ("ae", "o"),
    "go": ("u", "o"),
    "bed": ("e", "ae"),
    "cat": ("ae", "i"),
    "happy": ("ae", "u"),
}
UNKNOWN_WORDS = ("bed", "cat", "happy")


def _syllable(t, f0, formants, rate):
    f1, f2 = formants
    phase = 2 * np.pi * np.cumsum(f0) / rate
    out = np.zeros_like(t)
    for k in range(1, int(4000 / f0.max()) + 1):
        fk = k * f0
        amp = np.exp(-(((fk - f1) / 150.0) ** 2)) + 0.7 * np.exp(-(((fk - f2) / 220.0) ** 2)) + 0.02
        out += amp * np.sin(k * phase)
    return out * np.hanning(t.size)


def synth_word(word: str, seed: int, sample_rate: int = 16000) -> AudioClip:
    g = rngmod.stream(seed)
    shift = g.uniform(0.94, 1.06)
    f0_base = g.uniform(100.0, 220.0)
    total = g.uniform(0.45, 0.9)
    split = g.uniform(0.4, 0.6)
    parts = []
    for j, vowel in enumerate(WORD_VOWELS[word]):
        n = int(total * (split if j == 0 else 1 - split) * sample_rate)
        t = np.arange(n) / sample_rate
        glide = 1.0 + (0.1 if j == 0 else -0.1) * t / max(t[-1], 1e-9)
        f0 = f0_base * glide
        formants = tuple(shift * f for f in VOWELS[vowel])
        parts.append(_syllable(t, f0, formants, sample_rate))
    x = np.concatenate(parts)
    x *= g.uniform(0.3, 0.7) / np.max(np.abs(x))
    return AudioClip(x, sample_rate)


def make_micro_corpus(out_dir, n_train: int = 4, n_val: int = 1, n_test: int = 1, seed: int = 0, words=None) -> Path:
    """Write a keyword tree with validation_list.txt / testing_list.txt."""
    root = Path(out_dir)
    words = tuple(words) if words is not None else KEYWORDS + UNKNOWN_WORDS
    val, test = [], []
    for w_idx, word in enumerate(words):
        (root / word).mkdir(parents=True, exist_ok=True)
        for k in range(n_train + n_val + n_test):
            s = rngmod.derive_seed(seed, w_idx, k)
            rel = f"{word}/{s % 0xFFFFFFFF:08x}_nohash_0.wav"
            save_wav(synth_word(word, s), root / rel)
            if k >= n_train + n_val:
                test.append(rel)
            elif k >= n_train:
                val.append(rel)
    (root / "validation_list.txt").write_text("".join(r + "\n" for r in sorted(val)))
    (root / "testing_list.txt").write_text("".join(r + "\n" for r in sorted(test)))
    return root
