"""Clip-level metrics: accuracy, average precision, macro mAP, ROC and AUC."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import model as M
from .features import log_mel
from .synth import NUM_CLASSES, DatasetManifest
from .train import ClipSource, predict_logits

log = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    pass


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    return float(np.mean(preds == labels))


def argmax_rows(scores) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.asarray(scores).argmax(axis=1)


def average_precision(scores, positives) -> float:
    """Non-interpolated AP; equal scores are ranked by original index."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


class RocCurve(NamedTuple):
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # first entry is +inf, the (0, 0) corner
    auc: float


def roc_points(scores, positives) -> RocCurve:
    """Sweep thresholds over the distinct scores, highest first."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], positives[order]
    tp, fp = np.cumsum(y), np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def per_class_ap(score_matrix, labels, n_classes: int = NUM_CLASSES) -> list:
    """One-vs-rest AP per class; None where a class has no positives."""
    score_matrix = np.asarray(score_matrix)
    labels = np.asarray(labels)
    out = []
    for c in range(n_classes):
        pos = labels == c
        out.append(average_precision(score_matrix[:, c], pos) if pos.any() else None)
    return out


def macro_map(score_matrix, labels, n_classes: int = NUM_CLASSES) -> float:
    aps = per_class_ap(score_matrix, labels, n_classes)
    present = [a for a in aps if a is not None]
    if not present:
        raise ValueError("no class has a positive example")
    skipped = [c for c, a in enumerate(aps) if a is None]
    if skipped:
        log.warning("mAP skips classes without positives: %s", skipped)
    return float(np.mean(present))


def softmax(logits) -> np.ndarray:
    return np.exp(M.log_softmax(np.asarray(logits, np.float64)))


@dataclass
class EvalReport:
    record_ids: list
    labels: list
    scores: list  # N x n_classes softmax rows
    predictions: list
    accuracy: float
    class_ap: list
    macro_map: float
    class_auc: list
    macro_auc: float
    roc: list  # per class: None or {"threshold", "fpr", "tpr"} lists

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def roc_csv_rows(self):
        for c, curve in enumerate(self.roc):
            if curve is None:
                continue
            for thr, f, t in zip(curve["threshold"], curve["fpr"], curve["tpr"]):
                yield c, "inf" if thr is None else repr(thr), repr(f), repr(t)


def write_roc_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "threshold", "fpr", "tpr"])
        w.writerows(report.roc_csv_rows())


def report_from_scores(record_ids, labels, scores, n_classes: int = NUM_CLASSES) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    preds = argmax_rows(scores)
    aps = per_class_ap(scores, labels, n_classes)
    rocs, aucs = [], []
    for c in range(n_classes):
        pos = labels == c
        if not pos.any() or pos.all():
            rocs.append(None)
            aucs.append(None)
            continue
        curve = roc_points(scores[:, c], pos)
        aucs.append(curve.auc)
        thr = [None if np.isinf(t) else float(t) for t in curve.thresholds]
        rocs.append({"threshold": thr, "fpr": curve.fpr.tolist(), "tpr": curve.tpr.tolist()})
    present_ap = [a for a in aps if a is not None]
    present_auc = [a for a in aucs if a is not None]
    return EvalReport(
        record_ids=list(record_ids),
        labels=labels.tolist(),
        scores=scores.tolist(),
        predictions=preds.tolist(),
        accuracy=accuracy(preds, labels),
        class_ap=aps,
        macro_map=float(np.mean(present_ap)) if present_ap else None,
        class_auc=aucs,
        macro_auc=float(np.mean(present_auc)) if present_auc else None,
        roc=rocs,
    )


def evaluate(params: dict, manifest: DatasetManifest, batch_size: int = 256) -> EvalReport:
    """Score every test-split record with the eval-mode model."""
    records = manifest.split("test")
    if not records:
        raise ValueError("manifest has no test records")
    source = ClipSource(manifest, records, preload=False)
    feats = [log_mel(source.clip(i)).frames.astype(np.float32) for i in range(len(records))]
    scores = softmax(predict_logits(params, feats, batch_size))
    n_classes = M.infer_config(params).n_classes
    return report_from_scores([r.out_path for r in records], [r.label for r in records], scores, n_classes)
