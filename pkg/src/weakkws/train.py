"""Training loop: random crops, Adam, per-epoch validation checkpoints and
top-k checkpoint weight averaging."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import model as M
from . import rng as rngmod
from .audio_io import AudioClip, load_mono
from .features import SAMPLE_RATE, log_mel, pad_batch
from .synth import DatasetManifest

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    pass


class RecordError(RuntimeError):
    """A manifest record could not be read; the message names it."""


@dataclass
class TrainConfig:
    train_manifest: str = ""
    valid_manifest: str = ""
    out_dir: str = "run"
    batch_size: int = 64
    max_epochs: int = 200
    lr: float = 0.001
    crop_seconds: float | None = None
    seed: int = 0
    topk_average: int = 4
    stem_channels: int = 16
    block_channels: tuple = (24, 32, 48)
    jobs: int = 1
    preload: bool = True

    def __post_init__(self):
        if isinstance(self.block_channels, str):
            self.block_channels = tuple(int(c) for c in self.block_channels.split(",") if c.strip())
        self.block_channels = tuple(int(c) for c in self.block_channels)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.max_epochs < 1 or self.topk_average < 1:
            raise ValueError("max_epochs and topk_average must be >= 1")
        if self.crop_seconds is not None and not self.crop_seconds > 0:
            raise ValueError("crop_seconds must be positive")

    @property
    def model_config(self) -> M.ModelConfig:
        return M.ModelConfig(stem_channels=self.stem_channels, block_channels=self.block_channels)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(c) for c in v)
            lines.append(f"{f.name}={'' if v is None else v}")
        return "\n".join(lines) + "\n"


_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def coerce_train_values(values: dict) -> dict:
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for key, value in values.items():
        if key not in types:
            raise ValueError(f"unknown train config key {key!r}")
        if not isinstance(value, str):
            out[key] = value
            continue
        kind = types[key]
        if value == "" and "None" in kind:
            out[key] = None
        elif kind.startswith("int"):
            out[key] = int(value)
        elif kind.startswith("float"):
            out[key] = float(value)
        elif kind == "bool":
            out[key] = _BOOL[value.lower()]
        else:
            out[key] = value
    return out


# ----------------------------------------------------------------- crops


def crop_start(rng: np.random.Generator, n: int, crop_len: int) -> int:
    if crop_len > n:
        raise ValueError(f"crop of {crop_len} samples longer than clip of {n}")
    return int(rng.integers(0, n - crop_len, endpoint=True))


def random_crop(clip: AudioClip, crop_seconds: float, rng: np.random.Generator) -> AudioClip:
    crop_len = int(round(crop_seconds * clip.sample_rate))
    start = crop_start(rng, len(clip), crop_len)
    return AudioClip(clip.samples[start : start + crop_len], clip.sample_rate)


# ------------------------------------------------------------------ adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns new (params, state)."""
    step = state.step + 1
    new_params = dict(params)
    m, v = dict(state.m), dict(state.v)
    c1 = 1.0 - ADAM_BETA1**step
    c2 = 1.0 - ADAM_BETA2**step
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name} at step {step}")
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        mi = ADAM_BETA1 * m.get(name, 0.0) + (1.0 - ADAM_BETA1) * g
        vi = ADAM_BETA2 * v.get(name, 0.0) + (1.0 - ADAM_BETA2) * g * g
        update = lr * (mi / c1) / (np.sqrt(vi / c2) + ADAM_EPS)
        new_params[name] = (p - update).astype(p.dtype)
        m[name] = np.asarray(mi, dtype=p.dtype)
        v[name] = np.asarray(vi, dtype=p.dtype)
    return new_params, AdamState(m, v, step)


# ------------------------------------------------------------- averaging


@dataclass
class LedgerEntry:
    epoch: int
    accuracy: float
    path: str


def sort_ledger(entries) -> list:
    return sorted(entries, key=lambda e: (-e.accuracy, e.epoch))


def average_params(param_list) -> dict:
    """Elementwise mean of congruent parameter dicts (running stats included)."""
    param_list = list(param_list)
    if not param_list:
        raise ValueError("nothing to average")
    first = param_list[0]
    for other in param_list[1:]:
        if list(other) != list(first) or any(other[k].shape != first[k].shape for k in first):
            raise M.CheckpointFormatError("cannot average checkpoints of different shapes")
    out = {}
    for k, v in first.items():
        acc = np.zeros(v.shape, np.float64)
        for p in param_list:
            acc += p[k]
        out[k] = (acc / len(param_list)).astype(v.dtype)
    return out


def average_checkpoints(paths, k: int = 4) -> dict:
    """Average the best ``k`` checkpoints.

    ``paths`` is either a list of files (taken in the given order) or a list
    of LedgerEntry, in which case the top-k by accuracy are used, earlier
    epochs winning ties.
    """
    items = list(paths)
    if not items:
        raise ValueError("no checkpoints to average")
    if isinstance(items[0], LedgerEntry):
        items = [e.path for e in sort_ledger(items)]
    return average_params(M.read_checkpoint(p) for p in items[:k])


# ------------------------------------------------------------- data side


class ClipSource:
    """Decodes (and optionally caches) manifest audio at 16 kHz."""

    def __init__(self, manifest: DatasetManifest, records, preload: bool):
        self.manifest = manifest
        self.records = records
        self.cache = {}
        self.preload = preload

    def clip(self, i: int) -> AudioClip:
        if i in self.cache:
            return self.cache[i]
        rec = self.records[i]
        path = self.manifest.resolve(rec.out_path)
        try:
            clip = load_mono(path, SAMPLE_RATE)
        except Exception as exc:
            raise RecordError(f"record {i} ({rec.out_path}): {exc}") from exc
        if self.preload:
            self.cache[i] = clip
        return clip


def _features(source: ClipSource, i: int, crop_seconds, rng):
    clip = source.clip(i)
    # clips already no longer than the crop (clean negatives) stay whole
    if crop_seconds is not None and len(clip) > round(crop_seconds * clip.sample_rate):
        clip = random_crop(clip, crop_seconds, rng)
    return log_mel(clip).frames.astype(np.float32)


def predict_logits(params: dict, feats, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits per item; equal-length items are batched, never padded."""
    feats = list(feats)
    out = np.zeros((len(feats), M.infer_config(params).n_classes), np.float64)
    by_len = {}
    for i, f in enumerate(feats):
        by_len.setdefault(f.shape[0], []).append(i)
    for length in sorted(by_len):
        idx = by_len[length]
        for s in range(0, len(idx), batch_size):
            chunk = idx[s : s + batch_size]
            x = np.stack([feats[i] for i in chunk])
            out[chunk] = M.forward(params, x, "eval")
    return out


def _load_split(path, split):
    manifest = DatasetManifest.load(path)
    records = manifest.split(split)
    if not records:
        raise ValueError(f"{path}: no {split} records")
    return manifest, records


def _write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy", "wall_seconds"])
        for r in rows:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_loss"]), repr(r["val_accuracy"]), f"{r['wall_seconds']:.3f}"])


def run_training(config: TrainConfig):
    """Train, checkpoint every epoch, and average the top-k checkpoints.

    Returns (averaged params, ledger sorted best-first, list of metric rows).
    Writes ``checkpoints/epoch_NNN.wkws``, ``ledger.json``, ``metrics.csv``,
    ``avg.wkws`` and ``train.cfg`` under ``config.out_dir``.
    """
    out = Path(config.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "train.cfg").write_text(config.to_text())

    train_manifest, train_recs = _load_split(config.train_manifest, "train")
    valid_manifest, valid_recs = _load_split(config.valid_manifest or config.train_manifest, "validation")
    train_src = ClipSource(train_manifest, train_recs, config.preload)
    valid_src = ClipSource(valid_manifest, valid_recs, True)
    labels = np.array([r.label for r in train_recs])
    valid_labels = np.array([r.label for r in valid_recs])
    valid_feats = [_features(valid_src, i, None, None) for i in range(len(valid_recs))]
    valid_src.cache.clear()

    params = M.init_model(rngmod.stream(config.seed, 0), config.model_config)
    state = AdamState()
    pool = ThreadPoolExecutor(config.jobs) if config.jobs > 1 else None
    ledger, rows = [], []
    t0 = time.perf_counter()
    try:
        for epoch in range(config.max_epochs):
            order = rngmod.stream(config.seed, 1, epoch).permutation(len(train_recs))
            losses, weights = [], []
            for b in range(0, len(order), config.batch_size):
                idx = order[b : b + config.batch_size]
                # crop streams are keyed by (epoch, record) so loader order never matters
                jobs = [(train_src, int(i), config.crop_seconds, rngmod.stream(config.seed, 2, epoch, int(i))) for i in idx]
                feats = list(pool.map(lambda a: _features(*a), jobs)) if pool else [_features(*a) for a in jobs]
                batch = pad_batch(zip(feats, labels[idx]))
                loss, grads = M.backward(params, batch)
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, step {state.step + 1}")
                params, state = adam_step(params, grads, state, config.lr)
                losses.append(loss)
                weights.append(len(idx))

            logits = predict_logits(params, valid_feats)
            val_acc = float(np.mean(logits.argmax(axis=1) == valid_labels))
            val_loss = float(-M.log_softmax(logits)[np.arange(len(valid_labels)), valid_labels].mean())
            ckpt = out / "checkpoints" / f"epoch_{epoch:03d}.wkws"
            M.write_checkpoint(ckpt, params)
            ledger.append(LedgerEntry(epoch, val_acc, str(ckpt)))
            rows.append(
                dict(
                    epoch=epoch,
                    train_loss=float(np.average(losses, weights=weights)),
                    val_loss=val_loss,
                    val_accuracy=val_acc,
                    wall_seconds=time.perf_counter() - t0,
                )
            )
            log.info("epoch %d train_loss %.4f val_acc %.4f", epoch, rows[-1]["train_loss"], val_acc)
    finally:
        if pool:
            pool.shutdown()

    ledger = sort_ledger(ledger)
    averaged = average_checkpoints(ledger, config.topk_average)
    M.write_checkpoint(out / "avg.wkws", averaged)
    _write_metrics(out / "metrics.csv", rows)
    (out / "ledger.json").write_text(
        json.dumps(
            [{"epoch": e.epoch, "val_accuracy": e.accuracy, "checkpoint": Path(e.path).relative_to(out).as_posix()} for e in ledger],
            indent=1,
        )
        + "\n"
    )
    return averaged, ledger, rows
