# msfcn/metrics/confusion.py
"""Confusion matrix accumulation and the segmentation indices derived from it."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from msfcn.core.tensor import IGNORE_INDEX
from msfcn.errors import DataError


@dataclass
class ConfusionMatrix:
    """counts[i, j] = pixels with true class i predicted as class j."""

    num_classes: int
    counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        elif self.counts.shape != (self.num_classes, self.num_classes):
            raise DataError(f"confusion counts {self.counts.shape} do not match K={self.num_classes}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise DataError(f"cannot merge K={other.num_classes} into K={self.num_classes}")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return self.merge(other)


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, truth: np.ndarray) -> ConfusionMatrix:
    """Add one (pred, truth) pair of label maps; ignore_index truth pixels are skipped."""
    if pred.shape != truth.shape:
        raise DataError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    k = cm.num_classes
    t = truth.astype(np.int64).ravel()
    p = pred.astype(np.int64).ravel()
    keep = t != IGNORE_INDEX
    t, p = t[keep], p[keep]
    if t.size and (t.max() >= k or t.min() < 0):
        raise DataError(f"truth label {int(t.max())} is outside 0..{k - 1}")
    if p.size and (p.max() >= k or p.min() < 0):
        raise DataError(f"predicted label {int(p.max())} is outside 0..{k - 1}")
    cm.counts += np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return cm


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    iou: float
    support: int


@dataclass(frozen=True)
class MetricReport:
    oa: float
    aa: float
    kappa: float
    miou: float
    fwiou: float
    mean_f1: float
    per_class: tuple[ClassScores, ...]

    def summary(self) -> dict[str, float]:
        return {
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
            "miou": self.miou,
            "fwiou": self.fwiou,
            "mean_f1": self.mean_f1,
        }


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def compute_report(cm: ConfusionMatrix) -> MetricReport:
    """OA, AA, Kappa, IoU/mIoU/FWIoU and per-class precision/recall/F1.

    Classes absent from both truth and prediction drop out of every mean.
    F1 of a class with zero precision and recall is 0 and counts toward the
    mean only when the class occurs in truth.
    """
    counts = cm.counts.astype(np.int64)
    n = int(counts.sum())
    if n == 0:
        raise DataError("confusion matrix is empty; no scores can be computed")
    d = np.diag(counts).astype(float)
    r = counts.sum(axis=1).astype(float)
    c = counts.sum(axis=0).astype(float)
    union = r + c - d

    # exact integer arithmetic up to the final division
    agree = int(np.trace(counts))
    chance = sum(int(a) * int(b) for a, b in zip(counts.sum(axis=1), counts.sum(axis=0)))
    oa = agree / n
    kappa = 0.0 if chance == n * n else (n * agree - chance) / (n * n - chance)

    present = r > 0
    aa = float(np.mean(d[present] / r[present]))

    defined = union > 0
    iou = np.zeros_like(d)
    iou[defined] = d[defined] / union[defined]
    miou = float(iou[defined].mean())
    fwiou = float(((r[defined] / n) * iou[defined]).sum())

    per_class = []
    f1s = []
    for i in range(cm.num_classes):
        p_i = _ratio(d[i], c[i])
        r_i = _ratio(d[i], r[i])
        f1 = _ratio(2 * p_i * r_i, p_i + r_i)
        if present[i]:
            f1s.append(f1)
        per_class.append(ClassScores(p_i, r_i, f1, float(iou[i]), int(r[i])))
    mean_f1 = float(np.mean(f1s))
    return MetricReport(oa, aa, kappa, miou, fwiou, mean_f1, tuple(per_class))


def write_report_csv(report: MetricReport, directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    per_class = directory / "per_class.csv"
    with per_class.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["class", "precision", "recall", "f1", "iou", "support"])
        for i, s in enumerate(report.per_class):
            w.writerow([i, f"{s.precision:.9f}", f"{s.recall:.9f}", f"{s.f1:.9f}", f"{s.iou:.9f}", s.support])
    summary = directory / "summary.csv"
    with summary.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(list(report.summary()))
        w.writerow([f"{v:.9f}" for v in report.summary().values()])
    return summary, per_class


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(cm.counts.tolist())
    return path
