"""Command line entry point.

Exit codes: 0 success, 1 usage/validation error, 2 runtime error.
Machine-readable output goes to files only; logs go to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path

from . import __version__
from . import model as M
from .audio_io import load_mono, save_wav
from .corpus import make_micro_corpus
from .evaluation import EvalReport, evaluate, write_roc_csv
from .features import SAMPLE_RATE, log_mel, spectrogram_csv
from .synth import (
    MANIFEST_NAME,
    VARIANTS,
    DatasetManifest,
    SynthConfig,
    build_dataset,
    gen_noise,
    list_noise,
    scan_keyword_corpus,
)
from .train import TrainConfig, coerce_train_values, parse_config_text, run_training

log = logging.getLogger("weakkws")

MANIFEST_FORMAT = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _version_string():
    return f"weakkws {__version__} (checkpoint format {M.CHECKPOINT_VERSION}, manifest format {MANIFEST_FORMAT})"


def _read_config(path) -> dict:
    if path is None:
        return {}
    return parse_config_text(Path(path).read_text())


def _overrides(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ------------------------------------------------------------- commands

SYNTH_KEYS = ("variant", "target_seconds", "snr_db", "sample_rate", "seed", "keyword_dir", "noise_dir", "out_dir")


def _prepare_synth(args):
    values = _read_config(args.config)
    unknown = set(values) - set(SYNTH_KEYS)
    if unknown:
        raise UsageError(f"unknown synth config keys: {sorted(unknown)}")
    values.update(_overrides(args, SYNTH_KEYS))
    for key, cast in (("target_seconds", float), ("snr_db", float), ("sample_rate", int), ("seed", int)):
        if isinstance(values.get(key), str):
            values[key] = cast(values[key]) if values[key] != "" else None
    for key in ("variant", "keyword_dir", "out_dir"):
        if key not in values:
            raise UsageError(f"synth needs --{key.replace('_', '-')}")
    cfg = SynthConfig(**values)
    if cfg.variant != "clean" and not list_noise(cfg.noise_dir):
        raise UsageError(f"no noise clips under {cfg.noise_dir}")
    return cfg


def cmd_synth(args, cfg: SynthConfig):
    entries = scan_keyword_corpus(cfg.keyword_dir)
    noise = list_noise(cfg.noise_dir) if cfg.noise_dir else []
    manifest = build_dataset(cfg, entries, noise, strict=not args.lenient, jobs=args.jobs or os.cpu_count() or 1)
    path = Path(cfg.out_dir) / MANIFEST_NAME
    log.info("wrote %d records, manifest sha256 %s", len(manifest.records), _sha256(path))


TRAIN_KEYS = tuple(f for f in TrainConfig.__dataclass_fields__)


def _prepare_train(args):
    values = _read_config(args.config)
    values.update(_overrides(args, TRAIN_KEYS))
    values = coerce_train_values(values)
    if not values.get("train_manifest"):
        raise UsageError("train needs --train-manifest (or train_manifest in --config)")
    return TrainConfig(**values)


def cmd_train(args, cfg: TrainConfig):
    _, ledger, rows = run_training(cfg)
    log.info("best epoch %d (val acc %.4f); averaged top-%d", ledger[0].epoch, ledger[0].accuracy, cfg.topk_average)


def cmd_eval(args, _):
    params = M.read_checkpoint(args.model)
    report = evaluate(params, DatasetManifest.load(args.manifest), batch_size=args.batch_size)
    Path(args.report).write_text(report.to_json())
    if args.roc_csv:
        write_roc_csv(report, args.roc_csv)
    log.info("accuracy %.4f  macro mAP %s  macro AUC %s", report.accuracy, report.macro_map, report.macro_auc)


def cmd_roc_export(args, _):
    report = EvalReport.from_json(Path(args.report).read_text())
    write_roc_csv(report, args.out)


def cmd_features_dump(args, _):
    spec = log_mel(load_mono(args.wav, SAMPLE_RATE))
    Path(args.out).write_text(spectrogram_csv(spec))


def cmd_gen_noise(args, _):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        clip = gen_noise(args.kind, args.seconds, args.sample_rate, args.seed * 1000 + i)
        save_wav(clip, out / f"{args.kind}_{i:03d}.wav")


def cmd_make_corpus(args, _):
    make_micro_corpus(args.out, args.n_train, args.n_val, args.n_test, args.seed)


def _prepare_smoke(args):
    from .smoke import SmokeConfig

    if args.variant not in VARIANTS:
        raise UsageError(f"unknown variant {args.variant}")
    if (args.snr is not None) != (args.variant == "weak_snr"):
        raise UsageError("--snr is required for weak_snr and only for weak_snr")
    return SmokeConfig(
        out_dir=args.out,
        seed=args.seed,
        variant=args.variant,
        snr_db=args.snr,
        target_seconds=args.duration,
        epochs=args.epochs,
        jobs=args.jobs or 1,
    )


def cmd_smoke(args, cfg):
    from .smoke import end_to_end_smoke

    report = end_to_end_smoke(cfg)
    log.info("smoke accuracy %.4f, report sha256 %s", report.accuracy, _sha256(Path(cfg.out_dir) / "report.json"))


# --------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="weakkws", description="Temporally weak keyword spotting toolkit")
    p.add_argument("--version", action="version", version=_version_string())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="build a clean/weak/weak_snr/weak_pos dataset")
    s.add_argument("--config")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--duration", "--target-seconds", dest="target_seconds", type=float)
    s.add_argument("--snr", "--snr-db", dest="snr_db", type=float)
    s.add_argument("--keywords", "--keyword-dir", dest="keyword_dir")
    s.add_argument("--noise", "--noise-dir", dest="noise_dir")
    s.add_argument("--out", "--out-dir", dest="out_dir")
    s.add_argument("--sample-rate", dest="sample_rate", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int)
    s.add_argument("--lenient", action="store_true", help="skip failing records instead of aborting")
    s.set_defaults(func=cmd_synth, prepare=_prepare_synth)

    t = sub.add_parser("train", help="train and average the top-k checkpoints")
    t.add_argument("--config")
    t.add_argument("--train-manifest", dest="train_manifest")
    t.add_argument("--valid-manifest", dest="valid_manifest")
    t.add_argument("--out", "--out-dir", dest="out_dir")
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--max-epochs", "--epochs", dest="max_epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--crop-seconds", dest="crop_seconds", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--topk-average", dest="topk_average", type=int)
    t.add_argument("--stem-channels", dest="stem_channels", type=int)
    t.add_argument("--block-channels", dest="block_channels")
    t.add_argument("--jobs", type=int)
    t.add_argument("--preload", choices=("true", "false"))
    t.set_defaults(func=cmd_train, prepare=_prepare_train)

    e = sub.add_parser("eval", help="score a checkpoint on the test split")
    e.add_argument("--model", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--roc-csv")
    e.add_argument("--batch-size", type=int, default=256)
    e.add_argument("--jobs", type=int)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("roc-export", help="ROC points of a report as CSV")
    r.add_argument("--report", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_roc_export)

    f = sub.add_parser("features-dump", help="log-Mel spectrogram of one WAV as CSV")
    f.add_argument("--wav", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_features_dump)

    g = sub.add_parser("gen-noise", help="write synthetic white/pink noise clips")
    g.add_argument("--kind", choices=("white", "pink"), default="white")
    g.add_argument("--seconds", type=float, default=10.0)
    g.add_argument("--sample-rate", type=int, default=16000)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_noise)

    c = sub.add_parser("make-corpus", help="write a procedural micro keyword corpus")
    c.add_argument("--out", required=True)
    c.add_argument("--n-train", type=int, default=4)
    c.add_argument("--n-val", type=int, default=1)
    c.add_argument("--n-test", type=int, default=1)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_make_corpus)

    m = sub.add_parser("smoke", help="end-to-end micro pipeline")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--variant", default="weak")
    m.add_argument("--snr", type=float)
    m.add_argument("--duration", type=float, default=3.0)
    m.add_argument("--epochs", type=int, default=3)
    m.add_argument("--jobs", type=int)
    m.set_defaults(func=cmd_smoke, prepare=_prepare_smoke)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        prepared = args.prepare(args) if hasattr(args, "prepare") else None
    except (UsageError, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"weakkws {args.command}: {exc}", file=sys.stderr)
        return 1
    try:
        args.func(args, prepared)
    except Exception as exc:
        log.error("%s failed: %s", args.command, exc)
        log.debug("traceback", exc_info=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
