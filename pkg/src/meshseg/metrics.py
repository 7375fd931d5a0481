"""Confusion-matrix metrics over labeled faces.

All quantities exist in two flavors: unweighted (each face counts once) and
area-weighted (each face counts its area). F1 for a class with an empty
denominator is zero, and the mean F1 averages over all classes whether or
not they occur in the data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh_io import UNLABELED


@dataclass
class MetricsReport:
    confusion: np.ndarray            # (C, C) rows true, cols predicted
    weighted_confusion: np.ndarray
    f1: np.ndarray                   # (C,)
    mean_f1: float
    overall_accuracy: float
    weighted_f1: np.ndarray
    weighted_mean_f1: float
    weighted_overall_accuracy: float
    labeled_count: int


def confusion_matrix(
    true_labels: np.ndarray,
    pred_labels: np.ndarray,
    num_classes: int,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Accumulate (true, predicted) cells in sample order."""
    matrix = np.zeros((num_classes, num_classes), dtype=np.float64)
    if weights is None:
        weights = np.ones(len(true_labels), dtype=np.float64)
    np.add.at(matrix, (true_labels, pred_labels), weights)
    return matrix


def f1_from_confusion(matrix: np.ndarray) -> np.ndarray:
    tp = np.diag(matrix).astype(np.float64)
    fp = matrix.sum(axis=0) - tp
    fn = matrix.sum(axis=1) - tp
    denom = 2.0 * tp + fp + fn
    out = np.zeros(len(matrix), dtype=np.float64)
    nonzero = denom > 0
    out[nonzero] = 2.0 * tp[nonzero] / denom[nonzero]
    return out


def accuracy_from_confusion(matrix: np.ndarray) -> float:
    total = matrix.sum()
    if total == 0:
        return 0.0
    return float(np.trace(matrix) / total)


def evaluate(
    pred_labels: np.ndarray,
    true_labels: np.ndarray,
    face_areas: np.ndarray,
    num_classes: int,
) -> MetricsReport:
    """Score predictions against labels, ignoring unlabeled faces.

    Raises when nothing is labeled or when any label or used prediction
    falls outside [0, num_classes).
    """
    pred_labels = np.asarray(pred_labels, dtype=np.int64)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    face_areas = np.asarray(face_areas, dtype=np.float64)
    if not (pred_labels.shape == true_labels.shape == face_areas.shape):
        raise ValueError("predictions, labels, and areas must have equal length")
    keep = true_labels != UNLABELED
    if not keep.any():
        raise ValueError("no labeled faces to evaluate")
    t = true_labels[keep]
    p = pred_labels[keep]
    a = face_areas[keep]
    if t.min() < 0 or t.max() >= num_classes:
        raise ValueError("true label outside [0, num_classes)")
    if p.min() < 0 or p.max() >= num_classes:
        raise ValueError("predicted label outside [0, num_classes)")
    counts = confusion_matrix(t, p, num_classes)
    weighted = confusion_matrix(t, p, num_classes, weights=a)
    return report_from_confusions(counts, weighted)


def report_from_confusions(counts: np.ndarray, weighted: np.ndarray) -> MetricsReport:
    """Build a full report from (possibly pooled) confusion matrices."""
    f1 = f1_from_confusion(counts)
    wf1 = f1_from_confusion(weighted)
    return MetricsReport(
        confusion=counts,
        weighted_confusion=weighted,
        f1=f1,
        mean_f1=float(f1.mean()),
        overall_accuracy=accuracy_from_confusion(counts),
        weighted_f1=wf1,
        weighted_mean_f1=float(wf1.mean()),
        weighted_overall_accuracy=accuracy_from_confusion(weighted),
        labeled_count=int(counts.sum()),
    )


def format_report(report: MetricsReport, class_names: list[str] | None = None) -> str:
    """Human-readable report with unweighted and area-weighted sections."""
    num_classes = len(report.f1)
    if class_names is None:
        class_names = [f"class_{c}" for c in range(num_classes)]
    lines = [f"labeled faces: {report.labeled_count}", ""]
    for title, f1, mf1, oa in (
        ("unweighted", report.f1, report.mean_f1, report.overall_accuracy),
        ("area-weighted", report.weighted_f1, report.weighted_mean_f1,
         report.weighted_overall_accuracy),
    ):
        lines.append(f"[{title}]")
        for name, value in zip(class_names, f1):
            lines.append(f"  F1 {name:<12} {value:.4f}")
        lines.append(f"  mean F1        {mf1:.4f}")
        lines.append(f"  overall acc    {oa:.4f}")
        lines.append("")
    return "\n".join(lines)


def write_metrics_csv(path: str | Path, report: MetricsReport,
                      class_names: list[str] | None = None) -> None:
    num_classes = len(report.f1)
    if class_names is None:
        class_names = [f"class_{c}" for c in range(num_classes)]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["metric", "class", "value"])
        for name, value in zip(class_names, report.f1):
            writer.writerow(["f1", name, f"{value:.17g}"])
        for name, value in zip(class_names, report.weighted_f1):
            writer.writerow(["area_weighted_f1", name, f"{value:.17g}"])
        writer.writerow(["mean_f1", "", f"{report.mean_f1:.17g}"])
        writer.writerow(["overall_accuracy", "", f"{report.overall_accuracy:.17g}"])
        writer.writerow(["area_weighted_mean_f1", "", f"{report.weighted_mean_f1:.17g}"])
        writer.writerow(
            ["area_weighted_overall_accuracy", "", f"{report.weighted_overall_accuracy:.17g}"]
        )
