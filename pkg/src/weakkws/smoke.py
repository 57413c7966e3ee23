"""Small end-to-end run: micro corpus -> synthetic noise -> synth -> train -> eval."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from . import model as M
from .audio_io import save_wav
from .corpus import make_micro_corpus
from .evaluation import evaluate, write_roc_csv
from .synth import DatasetManifest, SynthConfig, build_dataset, gen_noise, list_noise, scan_keyword_corpus
from .train import TrainConfig, run_training

log = logging.getLogger(__name__)


class SmokeStageError(RuntimeError):
    pass


@dataclass
class SmokeConfig:
    out_dir: str
    seed: int = 0
    variant: str = "weak"
    snr_db: float | None = None
    target_seconds: float = 3.0
    epochs: int = 3
    crop_seconds: float | None = 1.0
    jobs: int = 1


def write_noise_dir(out_dir, seed: int, count: int = 4, seconds: float = 6.0, sample_rate: int = 16000) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        kind = "white" if i % 2 == 0 else "pink"
        save_wav(gen_noise(kind, seconds, sample_rate, seed * 1000 + i), out / f"{kind}_{i:03d}.wav")
    return out


def end_to_end_smoke(cfg: SmokeConfig):
    """Returns the EvalReport; writes everything under ``cfg.out_dir``."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def stage(name, fn):
        log.info("smoke: %s", name)
        try:
            return fn()
        except Exception as exc:
            raise SmokeStageError(f"smoke stage '{name}' failed: {exc}") from exc

    kw_dir = stage("corpus", lambda: make_micro_corpus(out / "keywords", n_train=4, n_val=1, n_test=1, seed=cfg.seed))
    noise_dir = stage("noise", lambda: write_noise_dir(out / "noise", cfg.seed))
    synth_cfg = SynthConfig(
        variant=cfg.variant,
        keyword_dir=str(kw_dir),
        noise_dir=str(noise_dir),
        out_dir=str(out / "data"),
        target_seconds=cfg.target_seconds,
        snr_db=cfg.snr_db,
        seed=cfg.seed,
    )
    stage(
        "synth",
        lambda: build_dataset(synth_cfg, scan_keyword_corpus(kw_dir), list_noise(noise_dir), jobs=cfg.jobs),
    )
    manifest_path = out / "data" / "manifest.jsonl"
    train_cfg = TrainConfig(
        train_manifest=str(manifest_path),
        valid_manifest=str(manifest_path),
        out_dir=str(out / "run"),
        max_epochs=cfg.epochs,
        crop_seconds=cfg.crop_seconds if cfg.variant != "clean" else None,
        seed=cfg.seed,
        stem_channels=8,
        block_channels=(8, 12, 16),
    )
    stage("train", lambda: run_training(train_cfg))

    def _eval():
        params = M.read_checkpoint(out / "run" / "avg.wkws")
        report = evaluate(params, DatasetManifest.load(manifest_path))
        (out / "report.json").write_text(report.to_json())
        write_roc_csv(report, out / "roc.csv")
        return report

    return stage("eval", _eval)
