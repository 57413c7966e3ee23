import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from weakkws import __version__
from weakkws.audio_io import AudioClip, load_wav, save_wav
from weakkws.cli import main
from weakkws.evaluation import EvalReport
from weakkws.synth import DatasetManifest


def test_version(capsys):
    assert main(["--version"]) == 0
    out = capsys.readouterr().out
    assert __version__ in out and "checkpoint format" in out


def test_unknown_command_and_missing_args():
    assert main(["bogus"]) == 1
    assert main([]) == 1
    assert main(["eval", "--model", "x"]) == 1


def test_synth_validation_errors(tmp_path, micro_corpus):
    base = ["synth", "--keywords", str(micro_corpus), "--out", str(tmp_path / "o")]
    assert main(base + ["--variant", "weak_snr", "--duration", "2"]) == 1  # no snr, no noise
    assert main(base + ["--variant", "weak", "--duration", "0.5", "--noise", str(tmp_path)]) == 1
    assert main(["synth", "--variant", "clean", "--out", str(tmp_path)]) == 1


def test_runtime_error_exit_code(tmp_path):
    assert main(["eval", "--model", str(tmp_path / "none.wkws"), "--manifest", "x", "--report", "r"]) == 2


def test_synth_train_eval_pipeline(tmp_path, micro_corpus, noise_dir):
    data = tmp_path / "data"
    rc = main(
        ["synth", "--variant", "weak", "--duration", "2", "--keywords", str(micro_corpus),
         "--noise", str(noise_dir), "--out", str(data), "--seed", "2", "--jobs", "2"]
    )
    assert rc == 0
    manifest = DatasetManifest.load(data / "manifest.jsonl")
    assert manifest.config["variant"] == "weak"

    cfg = tmp_path / "train.cfg"
    cfg.write_text(f"train_manifest = {data / 'manifest.jsonl'}\nmax_epochs = 2\nstem_channels = 4\nblock_channels = 6,8,8\n")
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run), "--crop-seconds", "1", "--batch-size", "16"]) == 0
    assert (run / "avg.wkws").exists()
    assert "crop_seconds=1.0" in (run / "train.cfg").read_text()

    report = tmp_path / "report.json"
    roc = tmp_path / "roc.csv"
    assert main(["eval", "--model", str(run / "avg.wkws"), "--manifest", str(data / "manifest.jsonl"),
                 "--report", str(report), "--roc-csv", str(roc)]) == 0
    rep = EvalReport.from_json(report.read_text())
    assert len(rep.labels) == len(manifest.split("test"))

    roc2 = tmp_path / "roc2.csv"
    assert main(["roc-export", "--report", str(report), "--out", str(roc2)]) == 0
    assert roc2.read_bytes() == roc.read_bytes()


def test_train_config_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("train_manifest = x\nwarmup = 3\n")
    assert main(["train", "--config", str(cfg)]) == 1


def test_features_dump(tmp_path):
    x = np.random.default_rng(0).uniform(-0.5, 0.5, 16000)
    save_wav(AudioClip(x, 16000), tmp_path / "a.wav")
    assert main(["features-dump", "--wav", str(tmp_path / "a.wav"), "--out", str(tmp_path / "f.csv")]) == 0
    with open(tmp_path / "f.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 97 and all(len(r) == 64 for r in rows)


def test_gen_noise(tmp_path):
    assert main(["gen-noise", "--kind", "pink", "--seconds", "2", "--count", "2", "--out", str(tmp_path)]) == 0
    clips = sorted(tmp_path.glob("*.wav"))
    assert len(clips) == 2
    assert len(load_wav(clips[0])) == 32000


def test_smoke_weak_snr(tmp_path):
    out = tmp_path / "s"
    assert main(["smoke", "--out", str(out), "--variant", "weak_snr", "--snr", "0", "--epochs", "1"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert 0.0 <= rep["accuracy"] <= 1.0
    assert main(["smoke", "--out", str(out), "--variant", "weak_snr"]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "weakkws", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
    res = subprocess.run([sys.executable, "-m", "weakkws", "nope"], capture_output=True, text=True)
    assert res.returncode == 1 and "error" in res.stderr
