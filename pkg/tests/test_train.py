import csv
import itertools
import math

import numpy as np
import pytest
from scipy import stats

from weakkws import model as M
from weakkws.audio_io import AudioClip
from weakkws.synth import SynthConfig, build_dataset, list_noise, scan_keyword_corpus
from weakkws.train import (
    AdamState,
    LedgerEntry,
    TrainConfig,
    TrainingError,
    adam_step,
    average_checkpoints,
    average_params,
    coerce_train_values,
    crop_start,
    parse_config_text,
    random_crop,
    run_training,
    sort_ledger,
)

TINY = dict(stem_channels=4, block_channels=(6, 8, 8))


def test_crop_identity(rng):
    clip = AudioClip(rng.uniform(-1, 1, 16000), 16000)
    assert random_crop(clip, 1.0, rng).samples.tobytes() == clip.samples.tobytes()


def test_crop_too_long(rng):
    with pytest.raises(ValueError):
        random_crop(AudioClip(np.zeros(100), 16000), 1.0, rng)


def test_crop_is_contiguous_window(rng):
    x = np.arange(48000, dtype=float) / 48000
    out = random_crop(AudioClip(x, 16000), 1.0, rng)
    assert len(out) == 16000
    assert np.all(np.diff(out.samples) == pytest.approx(1 / 48000))


def test_crop_start_uniform_ks():
    g = np.random.Generator(np.random.Philox(7))
    starts = np.array([crop_start(g, 7 * 16000, 16000) for _ in range(100_000)])
    assert stats.kstest((starts + 0.5) / (6 * 16000 + 1), "uniform").pvalue > 0.01


def test_seven_second_crop_rarely_holds_whole_keyword():
    # exact interval geometry: keyword [o, o+L), crop [s, s+C)
    g = np.random.Generator(np.random.Philox(3))
    t, L, C = 7 * 16000, 16000, 16000
    offsets = g.integers(0, t - L, size=100_000, endpoint=True)
    starts = g.integers(0, t - C, size=100_000, endpoint=True)
    contains = (starts <= offsets) & (starts + C >= offsets + L)
    overlaps = (starts < offsets + L) & (offsets < starts + C)
    assert 0.0 <= contains.mean() <= 0.05
    # at most a 1 s overlap window on each side out of 6 s of start positions
    assert overlaps.mean() < 2 / 6 + 0.01


def test_adam_zero_grads_noop():
    p = {"w": np.array([1.0, -2.0], np.float32)}
    q, state = adam_step(p, {"w": np.zeros(2, np.float32)}, AdamState(), 1e-3)
    assert q["w"].tobytes() == p["w"].tobytes()
    assert state.step == 1


@pytest.mark.parametrize("g", [3.0, -0.02, 1e-3])
def test_adam_first_step_magnitude(g):
    p = {"w": np.array([0.5])}
    q, _ = adam_step(p, {"w": np.array([g])}, AdamState(), 1e-3)
    expected = 1e-3 * abs(g) / (abs(g) + 1e-8)
    assert abs(q["w"][0] - 0.5) == pytest.approx(expected, rel=1e-9)


def test_adam_matches_reference_sequence():
    g = np.random.default_rng(0)
    grads = [g.normal(size=3) for _ in range(5)]
    p = {"w": np.zeros(3)}
    state = AdamState()
    m = v = np.zeros(3)
    w = np.zeros(3)
    for t, gr in enumerate(grads, 1):
        p, state = adam_step(p, {"w": gr}, state, 0.01)
        m = 0.9 * m + 0.1 * gr
        v = 0.999 * v + 0.001 * gr**2
        w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"], w, rtol=1e-12)


def test_adam_per_parameter_independence():
    g = np.random.default_rng(1)
    p = {"a": g.normal(size=4).astype(np.float32), "b": g.normal(size=(2, 3)).astype(np.float32)}
    grads = [{k: g.normal(size=v.shape).astype(np.float32) for k, v in p.items()} for _ in range(3)]
    joint, s = dict(p), AdamState()
    split = {k: ({k: p[k]}, AdamState()) for k in p}
    for gr in grads:
        joint, s = adam_step(joint, gr, s, 1e-3)
        split = {k: adam_step(split[k][0], {k: gr[k]}, split[k][1], 1e-3) for k in p}
    for k in p:
        assert joint[k].tobytes() == split[k][0][k].tobytes()


def test_adam_non_finite():
    with pytest.raises(TrainingError, match="step 1"):
        adam_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, AdamState(), 1e-3)


def test_average_identical_is_identity():
    p = M.init_model(0)
    avg = average_params([p] * 4)
    assert all(avg[k].tobytes() == p[k].tobytes() for k in p)


def test_average_two_is_mean():
    a, b = M.init_model(0), M.init_model(1)
    avg = average_params([a, b])
    for k in a:
        expected = ((a[k].astype(np.float64) + b[k]) / 2).astype(np.float32)
        assert avg[k].tobytes() == expected.tobytes()


def test_average_permutation_invariant():
    ps = [M.init_model(i, M.ModelConfig(n_mels=8, **TINY)) for i in range(4)]
    ref = average_params(ps)
    for perm in itertools.permutations(range(4)):
        out = average_params([ps[i] for i in perm])
        assert all(out[k].tobytes() == ref[k].tobytes() for k in ref)


def test_average_shape_mismatch():
    with pytest.raises(M.CheckpointFormatError):
        average_params([M.init_model(0), M.init_model(0, M.ModelConfig(n_mels=8, **TINY))])


def test_average_checkpoints_uses_ledger_top_k(tmp_path):
    cfg = M.ModelConfig(n_mels=8, **TINY)
    entries = []
    for epoch, acc in enumerate([0.5, 0.9, 0.7, 0.9, 0.2, 0.8]):
        path = tmp_path / f"e{epoch}.wkws"
        M.write_checkpoint(path, M.init_model(epoch, cfg))
        entries.append(LedgerEntry(epoch, acc, str(path)))
    ranked = sort_ledger(entries)
    assert [e.epoch for e in ranked] == [1, 3, 5, 2, 0, 4]
    avg = average_checkpoints(entries, 4)
    ref = average_params(M.init_model(e, cfg) for e in (1, 3, 5, 2))
    assert all(avg[k].tobytes() == ref[k].tobytes() for k in ref)
    # fewer checkpoints than k: average what exists
    two = average_checkpoints(entries[:2], 4)
    ref2 = average_params([M.init_model(0, cfg), M.init_model(1, cfg)])
    assert all(two[k].tobytes() == ref2[k].tobytes() for k in ref2)


def test_config_text_round_trip():
    cfg = TrainConfig(train_manifest="a.jsonl", crop_seconds=1.0, block_channels=(8, 12))
    parsed = TrainConfig(**coerce_train_values(parse_config_text(cfg.to_text())))
    assert parsed == cfg
    none_crop = TrainConfig(**coerce_train_values(parse_config_text("crop_seconds=\n# comment\nlr = 0.01")))
    assert none_crop.crop_seconds is None and none_crop.lr == 0.01


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(ValueError):
        coerce_train_values({"learning_rate": "0.1"})
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        parse_config_text("just words")


@pytest.fixture(scope="module")
def weak_manifest(tmp_path_factory, micro_corpus, noise_dir):
    out = tmp_path_factory.mktemp("weak")
    cfg = SynthConfig("weak", str(micro_corpus), str(out), noise_dir=str(noise_dir), target_seconds=2.0, seed=4)
    build_dataset(cfg, scan_keyword_corpus(micro_corpus), list_noise(noise_dir))
    return out / "manifest.jsonl"


def _run(manifest, out, **kw):
    cfg = TrainConfig(train_manifest=str(manifest), out_dir=str(out), max_epochs=5, batch_size=16, crop_seconds=1.0, seed=3, **TINY, **kw)
    return run_training(cfg)


def _metrics_without_wall(path):
    with open(path) as fh:
        return [row[:-1] for row in csv.reader(fh)]


def test_training_deterministic(tmp_path, weak_manifest):
    avg_a, ledger_a, _ = _run(weak_manifest, tmp_path / "a")
    avg_b, ledger_b, _ = _run(weak_manifest, tmp_path / "b", jobs=3)
    assert [(e.epoch, e.accuracy) for e in ledger_a] == [(e.epoch, e.accuracy) for e in ledger_b]
    assert (tmp_path / "a" / "avg.wkws").read_bytes() == (tmp_path / "b" / "avg.wkws").read_bytes()
    assert _metrics_without_wall(tmp_path / "a" / "metrics.csv") == _metrics_without_wall(tmp_path / "b" / "metrics.csv")
    for e in range(5):
        name = f"checkpoints/epoch_{e:03d}.wkws"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_training_outputs_and_ledger(tmp_path, weak_manifest):
    avg, ledger, rows = _run(weak_manifest, tmp_path / "r")
    accs = [e.accuracy for e in ledger]
    assert accs == sorted(accs, reverse=True)
    assert len(ledger) == 5 and all(0 <= a <= 1 for a in accs)
    assert abs(rows[0]["val_loss"] - math.log(11)) < 0.3
    with open(tmp_path / "r" / "metrics.csv") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "epoch" and "train_loss" in header and "val_accuracy" in header and header[-1] == "wall_seconds"
    for name in ("avg.wkws", "ledger.json", "train.cfg"):
        assert (tmp_path / "r" / name).exists()
    ref = average_checkpoints([e.path for e in ledger[:4]])
    assert all(avg[k].tobytes() == ref[k].tobytes() for k in avg)


def test_training_clean_mixed_lengths(tmp_path, micro_corpus):
    out = tmp_path / "clean"
    build_dataset(SynthConfig("clean", str(micro_corpus), str(out)), scan_keyword_corpus(micro_corpus))
    _, ledger, rows = _run(out / "manifest.jsonl", tmp_path / "r", topk_average=2)
    assert len(rows) == 5
