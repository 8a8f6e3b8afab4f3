"""Snippet-level ROC-AUC and evaluation reports.

AUC is the Mann-Whitney statistic: the probability that a random abnormal
snippet outscores a random normal one, with ties credited 1/2. Scores from all
bags are pooled before a single AUC is computed.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from lego_fusion.errors import DataError, DegenerateLabels, ShapeMismatch


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        y = np.asarray(self.labels).reshape(-1)
        if s.shape != y.shape:
            raise ShapeMismatch("ScoredSet", [s.shape, y.shape])
        if not np.all(np.isfinite(s)):
            raise DataError("scores must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be binary")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.int8))


def _average_ranks(x):
    """1-based ranks with ties given their average rank. O(n log n)."""
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], sorted_x.size]
    avg = (starts + ends + 1) / 2.0  # mean of ranks start+1 .. end
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc(scores, labels=None):
    """Rank-based ROC-AUC of ``scores`` against binary ``labels``.

    Accepts either a :class:`ScoredSet` or the two arrays.
    """
    ss = scores if isinstance(scores, ScoredSet) else ScoredSet(scores, labels)
    n_pos = int(ss.labels.sum())
    n_neg = ss.labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels(f"AUC needs both classes; got {n_pos} positive, {n_neg} negative")
    ranks = _average_ranks(ss.scores)
    u = ranks[ss.labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion(scores, labels, threshold=0.5):
    s = np.asarray(scores)
    y = np.asarray(labels).astype(bool)
    pred = s >= threshold
    return {
        "tp": int(np.sum(pred & y)),
        "fp": int(np.sum(pred & ~y)),
        "tn": int(np.sum(~pred & ~y)),
        "fn": int(np.sum(~pred & y)),
        "threshold": threshold,
    }


def evaluate_model(model, dataset, threshold=0.5):
    """Score every bag of ``dataset`` and report pooled snippet AUC.

    Returns a dict with ``auc``, ``n_snippets``, ``confusion`` and per-bag
    ``bags`` entries (video id, bag index, scores, labels).
    """
    from lego_fusion.data_io import make_bags
    from lego_fusion.trainer import predict_bags

    missing = [m for m in model.modalities if m not in dataset.modalities]
    if missing:
        raise ShapeMismatch("evaluate_model", [("missing modalities", missing)])
    bags = make_bags(dataset, model.bag_size)
    if not bags:
        raise ShapeMismatch("evaluate_model", [("bag_size", model.bag_size), ("no complete bags", 0)])
    for bag in bags:
        for m in model.modalities:
            if bag.features[m].shape[0] != model.classifier.n:
                raise ShapeMismatch("evaluate_model", [bag.features[m].shape, model.classifier.W1.shape])
    per_bag = predict_bags(model, bags)
    scores = np.concatenate(per_bag)
    labels = np.concatenate([b.labels for b in bags])
    return {
        "auc": auc(scores, labels),
        "n_snippets": int(labels.size),
        "n_bags": len(bags),
        "confusion": confusion(scores, labels, threshold),
        "bags": [
            {"video": b.video_id, "bag": b.index, "scores": s.tolist(), "labels": b.labels.astype(int).tolist()}
            for b, s in zip(bags, per_bag)
        ],
    }


def write_report_json(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_report_csv(report, path):
    """One row per snippet: video, bag, node, score, label."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video", "bag", "node", "score", "label"])
        for entry in report["bags"]:
            for i, (s, y) in enumerate(zip(entry["scores"], entry["labels"])):
                writer.writerow([entry["video"], entry["bag"], i, repr(float(s)), y])


def write_scores(scores, labels, path):
    """Score dump: one ``score label`` pair per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s, y in zip(scores, labels):
            fh.write(f"{float(s)!r} {int(y)}\n")


def read_scores(path):
    scores, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'score label'")
            scores.append(float(parts[0]))
            labels.append(int(parts[1]))
    return np.array(scores), np.array(labels)
