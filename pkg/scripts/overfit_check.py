#!/usr/bin/env python3
"""Capacity sanity check: overfit 64 clean procedural utterances.

Prints the epoch-0 loss next to ln(11) and the final train accuracy of the
last-epoch and averaged models.
"""

import argparse
import math
import tempfile
from pathlib import Path

import numpy as np

from weakkws import model as M
from weakkws.corpus import make_micro_corpus
from weakkws.features import log_mel
from weakkws.synth import DatasetManifest, SynthConfig, build_dataset, scan_keyword_corpus
from weakkws.train import ClipSource, TrainConfig, predict_logits, run_training


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="keep artifacts here instead of a temp dir")
    args = p.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(args.out or tmp)
        kw = make_micro_corpus(root / "kw", n_train=math.ceil(args.samples / 13), n_val=1, n_test=1, seed=1)
        entries = scan_keyword_corpus(kw)
        train = [e for e in entries if e[2] == "train"][: args.samples]
        build_dataset(SynthConfig("clean", str(kw), str(root / "data")), train + [e for e in entries if e[2] != "train"])
        cfg = TrainConfig(train_manifest=str(root / "data" / "manifest.jsonl"), out_dir=str(root / "run"),
                          max_epochs=args.epochs, seed=args.seed)
        avg, _, rows = run_training(cfg)

        man = DatasetManifest.load(cfg.train_manifest)
        recs = man.split("train")
        src = ClipSource(man, recs, preload=True)
        feats = [log_mel(src.clip(i)).frames.astype(np.float32) for i in range(len(recs))]
        labels = np.array([r.label for r in recs])
        last = M.read_checkpoint(root / "run" / "checkpoints" / f"epoch_{args.epochs - 1:03d}.wkws")
        print(f"epoch-0 train loss {rows[0]['train_loss']:.4f} (ln 11 = {math.log(11):.4f})")
        for name, params in (("last", last), ("averaged", avg)):
            acc = np.mean(predict_logits(params, feats).argmax(1) == labels)
            print(f"{name:>8} model train accuracy {acc:.4f}")


if __name__ == "__main__":
    main()
