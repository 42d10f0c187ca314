"""Evaluation metrics: confusion counts, ROC/PR curves and areas.

The AUC implementations are written for exactness, not just closeness:
roc_auc accumulates the threshold sweep in integer arithmetic so it equals
the Mann-Whitney pair statistic bit for bit, and pr_auc uses the
interpolation-free step sum. Slow pair-counting / threshold-enumeration
oracles live alongside them for cross-checking.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .dataset import SequenceDataset
from .errors import DataError, MetricUndefinedError
from .model import Model

DEFAULT_THRESHOLD = 0.5


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float
    pr_auc: float
    roc_points: list[tuple[float, float]]
    pr_points: list[tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "metrics": {
                "accuracy": self.accuracy,
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "roc_auc": self.roc_auc,
                "pr_auc": self.pr_auc,
            },
            "curves": {
                "roc": [[float(x), float(y)] for x, y in self.roc_points],
                "pr": [[float(x), float(y)] for x, y in self.pr_points],
            },
        }


def _check_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.size == 0:
        raise MetricUndefinedError("no samples to evaluate")
    if scores.shape != labels.shape:
        raise DataError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    return scores, labels


def _sweep_groups(scores: np.ndarray, labels: np.ndarray):
    """Yield (positives, negatives) counts per distinct score, descending."""
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    boundaries = np.nonzero(np.diff(sorted_scores))[0] + 1
    for chunk in np.split(sorted_labels, boundaries):
        pos = int(chunk.sum())
        yield pos, len(chunk) - pos


def roc_auc(scores, labels) -> float:
    """Area under ROC by threshold sweep, exact under ties.

    Each tie group contributes trapezoid area f*(2*tp_before + p) on the
    doubled integer scale, which is precisely twice (concordant + 0.5*tied)
    for that group, so the result equals the Mann-Whitney statistic.
    """
    scores, labels = _check_inputs(scores, labels)
    total_pos = int(labels.sum())
    total_neg = labels.size - total_pos
    if total_pos == 0 or total_neg == 0:
        raise MetricUndefinedError(
            f"ROC-AUC needs both classes; got {total_pos} positives and {total_neg} negatives"
        )
    doubled_area = 0
    tp = 0
    for pos, neg in _sweep_groups(scores, labels):
        doubled_area += neg * (2 * tp + pos)
        tp += pos
    return doubled_area / (2 * total_pos * total_neg)


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) at every distinct threshold, from (0,0) to (1,1)."""
    scores, labels = _check_inputs(scores, labels)
    total_pos = int(labels.sum())
    total_neg = labels.size - total_pos
    if total_pos == 0 or total_neg == 0:
        raise MetricUndefinedError("ROC curve needs both classes")
    points = [(0.0, 0.0)]
    tp = fp = 0
    for pos, neg in _sweep_groups(scores, labels):
        tp += pos
        fp += neg
        points.append((fp / total_neg, tp / total_pos))
    return points


def pr_auc(scores, labels) -> float:
    """Area under the precision-recall curve: sum of (dR * precision) steps."""
    scores, labels = _check_inputs(scores, labels)
    total_pos = int(labels.sum())
    if total_pos == 0:
        raise MetricUndefinedError("PR-AUC needs at least one positive")
    area = 0.0
    tp = fp = 0
    prev_recall = 0.0
    for pos, neg in _sweep_groups(scores, labels):
        tp += pos
        fp += neg
        recall = tp / total_pos
        area += (recall - prev_recall) * (tp / (tp + fp))
        prev_recall = recall
    return area


def pr_curve(scores, labels) -> list[tuple[float, float]]:
    """(recall, precision) per distinct threshold, led by the (0, 1) anchor."""
    scores, labels = _check_inputs(scores, labels)
    total_pos = int(labels.sum())
    if total_pos == 0:
        raise MetricUndefinedError("PR curve needs at least one positive")
    points = [(0.0, 1.0)]
    tp = fp = 0
    for pos, neg in _sweep_groups(scores, labels):
        tp += pos
        fp += neg
        points.append((tp / total_pos, tp / (tp + fp)))
    return points


# -- brute-force oracles (slow reference implementations) -----------------------


def roc_auc_pair_oracle(scores, labels) -> float:
    """(concordant + 0.5*tied) / (P*N) by direct pair enumeration."""
    scores, labels = _check_inputs(scores, labels)
    pos_scores = scores[labels == 1]
    neg_scores = scores[labels == 0]
    if pos_scores.size == 0 or neg_scores.size == 0:
        raise MetricUndefinedError("ROC-AUC needs both classes")
    concordant = int((pos_scores[:, None] > neg_scores[None, :]).sum())
    tied = int((pos_scores[:, None] == neg_scores[None, :]).sum())
    return (concordant + 0.5 * tied) / (pos_scores.size * neg_scores.size)


def pr_auc_threshold_oracle(scores, labels) -> float:
    """Step-sum over explicitly enumerated distinct thresholds."""
    scores, labels = _check_inputs(scores, labels)
    total_pos = int(labels.sum())
    if total_pos == 0:
        raise MetricUndefinedError("PR-AUC needs at least one positive")
    area = 0.0
    prev_recall = 0.0
    for threshold in sorted(set(scores.tolist()), reverse=True):
        predicted = scores >= threshold
        tp = int((predicted & (labels == 1)).sum())
        fp = int((predicted & (labels == 0)).sum())
        recall = tp / total_pos
        area += (recall - prev_recall) * (tp / (tp + fp))
        prev_recall = recall
    return area


# -- scalar metrics and the full report ------------------------------------------


def confusion_and_scalars(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> dict:
    """Counts at `threshold` plus accuracy/precision/recall/F1.

    Zero-denominator conventions: precision, recall, and F1 fall back to 0.
    """
    scores, labels = _check_inputs(scores, labels)
    predicted = scores >= threshold
    actual = labels == 1
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    tn = int((~predicted & ~actual).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
        "accuracy": (tp + tn) / labels.size,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def compute_report(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> MetricsReport:
    scalars = confusion_and_scalars(scores, labels, threshold)
    return MetricsReport(
        **scalars,
        roc_auc=roc_auc(scores, labels),
        pr_auc=pr_auc(scores, labels),
        roc_points=roc_curve(scores, labels),
        pr_points=pr_curve(scores, labels),
    )


def score_dataset(model: Model, data: SequenceDataset, batch_size: int = 128) -> np.ndarray:
    """Class-1 probabilities in the dataset's original record order."""
    scores = np.zeros(data.size, dtype=np.float64)
    with no_grad():
        for batch in data.batches(batch_size):
            probs, _, _ = model.forward(batch.seq, batch.graph, batch.adjacency, training=False)
            scores[batch.indices] = probs.data[:, 1]
    return scores


def evaluate(model: Model, data: SequenceDataset, out_dir: str | Path | None = None,
             batch_size: int = 128, threshold: float = DEFAULT_THRESHOLD) -> MetricsReport:
    """Score a labeled dataset and build the report; write files when out_dir given."""
    if data.labels is None:
        raise DataError("evaluation needs labeled records")
    scores = score_dataset(model, data, batch_size)
    report = compute_report(scores, data.labels, threshold)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def write_report(report: MetricsReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    with (out_dir / "roc_curve.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr"])
        writer.writerows(report.roc_points)
    with (out_dir / "pr_curve.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recall", "precision"])
        writer.writerows(report.pr_points)
    with (out_dir / "confusion_matrix.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["", "predicted_negative", "predicted_positive"])
        writer.writerow(["actual_negative", report.tn, report.fp])
        writer.writerow(["actual_positive", report.fn, report.tp])
