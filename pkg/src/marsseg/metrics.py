"""Confusion-matrix accumulation, per-class IoU and evaluation reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DataError, DimensionError
from .losses import IGNORE_INDEX


@dataclass
class ConfusionMatrix:
    """Pixel counts; rows are ground truth, columns are predictions."""

    num_classes: int
    counts: np.ndarray = None
    ignore_count: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def pixels_seen(self) -> int:
        return self.total + self.ignore_count

    def update(self, pred, target) -> "ConfusionMatrix":
        pred, target = np.asarray(pred), np.asarray(target)
        if pred.shape != target.shape:
            raise DimensionError(f"pred shape {pred.shape} != target shape {target.shape}")
        n = self.num_classes
        valid = target != IGNORE_INDEX
        t, p = target[valid].astype(np.int64), pred[valid].astype(np.int64)
        if t.size and (t.min() < 0 or t.max() >= n or p.min() < 0 or p.max() >= n):
            raise DataError(f"class id outside [0, {n})")
        self.counts += np.bincount(t * n + p, minlength=n * n).reshape(n, n)
        self.ignore_count += int((~valid).sum())
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise DimensionError("cannot merge matrices with different class counts")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts, self.ignore_count + other.ignore_count)

    __add__ = merge


def accumulate(conf: ConfusionMatrix, pred, target) -> ConfusionMatrix:
    """Return ``conf`` plus the counts from one batch (``conf`` is not modified)."""
    return conf.merge(ConfusionMatrix(conf.num_classes).update(pred, target))


def iou_per_class(conf: ConfusionMatrix) -> np.ndarray:
    """TP / (TP + FP + FN) per class; NaN marks classes absent from both
    ground truth and prediction."""
    tp = np.diag(conf.counts).astype(np.float64)
    denom = conf.counts.sum(axis=0) + conf.counts.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / np.maximum(denom, 1), np.nan)


def miou(conf: ConfusionMatrix) -> float:
    """Mean IoU over present classes; NaN when no class is present."""
    iou = iou_per_class(conf)
    present = ~np.isnan(iou)
    return float(iou[present].mean()) if present.any() else float("nan")


@dataclass
class EvalReport:
    class_names: List[str]
    iou: np.ndarray
    pixel_fraction: np.ndarray
    miou: float
    confusion: Optional[ConfusionMatrix] = field(default=None, repr=False)

    @classmethod
    def from_confusion(cls, conf: ConfusionMatrix, class_names: Optional[Sequence[str]] = None) -> "EvalReport":
        names = list(class_names) if class_names is not None else [f"class_{k}" for k in range(conf.num_classes)]
        if len(names) != conf.num_classes:
            raise DimensionError("class name count does not match confusion matrix")
        gt = conf.counts.sum(axis=1).astype(np.float64)
        frac = gt / gt.sum() if gt.sum() > 0 else np.zeros_like(gt)
        return cls(names, iou_per_class(conf), frac, miou(conf), conf)

    @property
    def absent(self) -> List[str]:
        return [name for name, v in zip(self.class_names, self.iou) if np.isnan(v)]

    def rows(self):
        for name, v, f in zip(self.class_names, self.iou, self.pixel_fraction):
            yield name, v, f

    def to_text(self) -> str:
        width = max([len(n) for n in self.class_names] + [len("mIoU")])
        lines = [f"{'class':<{width}}  {'IoU':>8}  {'pixels':>8}"]
        for name, v, f in self.rows():
            shown = "absent" if np.isnan(v) else f"{v:.4f}"
            lines.append(f"{name:<{width}}  {shown:>8}  {f:>8.4f}")
        shown = "absent" if np.isnan(self.miou) else f"{self.miou:.4f}"
        lines.append(f"{'mIoU':<{width}}  {shown:>8}  {1.0 if self.pixel_fraction.sum() else 0.0:>8.4f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "iou", "pixel_fraction"])
        for name, v, f in self.rows():
            writer.writerow([name, "" if np.isnan(v) else f"{v:.6f}", f"{f:.6f}"])
        writer.writerow(["mIoU", "" if np.isnan(self.miou) else f"{self.miou:.6f}", ""])
        return buf.getvalue()
