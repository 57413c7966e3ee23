#!/usr/bin/env python3
"""Full-scale training regimes on a real keyword corpus and noise directory.

Each regime synthesizes its dataset, trains the full model, averages the top
checkpoints, and scores the clean test split. A summary JSON collects the
headline numbers of every regime that ran.

    python3 scripts/run_regimes.py --keywords GSC_DIR --noise NOISE_DIR --out runs \
        --regimes clean weak3_crop1 --jobs 8
"""

import argparse
import json
import logging
import os
import time
from pathlib import Path

from weakkws import model as M
from weakkws.evaluation import evaluate, write_roc_csv
from weakkws.synth import DatasetManifest, SynthConfig, build_dataset, list_noise, scan_keyword_corpus
from weakkws.train import TrainConfig, run_training

# name -> (variant, target seconds, snr dB, crop seconds)
REGIMES = {
    "clean": ("clean", 3.0, None, None),
    "weak3": ("weak", 3.0, None, None),
    "weak3_crop1": ("weak", 3.0, None, 1.0),
    "weak5_crop1": ("weak", 5.0, None, 1.0),
    "weak7_crop1": ("weak", 7.0, None, 1.0),
    "weak_snr0": ("weak_snr", 3.0, 0.0, 1.0),
    "weak_snr5": ("weak_snr", 3.0, 5.0, 1.0),
    "weak_snr10": ("weak_snr", 3.0, 10.0, 1.0),
    "weak_pos3_crop1": ("weak_pos", 3.0, None, 1.0),
}


def run_regime(name, keywords, noise, out, epochs=200, seed=0, jobs=1):
    variant, seconds, snr, crop = REGIMES[name]
    root = Path(out) / name
    data = root / "data"
    manifest_path = data / "manifest.jsonl"
    if not manifest_path.exists():
        cfg = SynthConfig(variant, str(keywords), str(data), noise_dir=str(noise) if variant != "clean" else None,
                          target_seconds=seconds, snr_db=snr, seed=seed)
        build_dataset(cfg, scan_keyword_corpus(keywords), list_noise(noise) if variant != "clean" else [], jobs=jobs)
    t0 = time.time()
    avg, ledger, _ = run_training(TrainConfig(
        train_manifest=str(manifest_path), out_dir=str(root / "run"), max_epochs=epochs,
        crop_seconds=crop, seed=seed, jobs=jobs,
    ))
    report = evaluate(avg, DatasetManifest.load(manifest_path))
    (root / "report.json").write_text(report.to_json())
    write_roc_csv(report, root / "roc.csv")
    return {
        "regime": name,
        "accuracy": report.accuracy,
        "macro_map": report.macro_map,
        "macro_auc": report.macro_auc,
        "best_val_accuracy": ledger[0].accuracy,
        "params": M.param_count(avg),
        "train_seconds": round(time.time() - t0, 1),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--keywords", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--out", default="runs")
    p.add_argument("--regimes", nargs="+", default=["clean", "weak3_crop1"], choices=sorted(REGIMES))
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    summary = []
    for name in args.regimes:
        row = run_regime(name, args.keywords, args.noise, args.out, args.epochs, args.seed, args.jobs)
        print(json.dumps(row))
        summary.append(row)
    Path(args.out, "summary.json").write_text(json.dumps(summary, indent=1) + "\n")


if __name__ == "__main__":
    main()
