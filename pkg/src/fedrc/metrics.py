"""Segmentation quality metrics: mIoU, mPrecision, mRecall, mF1.

Per-image, per-class pixel tallies (TP/FP/FN, with TN tracked but unused by
the four metrics) are accumulated first; ratios are then averaged over images
and finally over classes.

Averaging rules:

* An (image, class) cell where the class appears in neither prediction nor
  truth (TP = FP = FN = 0) is excluded from that class's average, for all
  four metrics, so absent classes neither reward nor penalize.
* In any other cell, a ratio whose denominator is zero (e.g. precision when
  the class was never predicted although it is present in the truth) counts
  as 0.
* A class with no valid cell anywhere is dropped from the class-level mean.
* F1 is computed per class from the class-level precision and recall
  averages, then averaged over classes.

Cell sums use compensated summation, so results are independent of the order
in which images were accumulated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = ["ImageTally", "SegmentationScores", "ConfusionAccumulator"]


@dataclass(frozen=True)
class ImageTally:
    """Per-class TP/FP/FN/TN pixel counts for one image."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray


class SegmentationScores(NamedTuple):
    miou: float
    mpre: float
    mrec: float
    mf1: float


class ConfusionAccumulator:
    """Collects per-image confusion tallies and reduces them to the metrics."""

    def __init__(self, num_classes: int) -> None:
        if num_classes < 2:
            raise ValueError("need at least 2 classes")
        self.num_classes = int(num_classes)
        self.tallies: list[ImageTally] = []

    def accumulate(self, prediction: np.ndarray, truth: np.ndarray) -> ImageTally:
        """Tally one image. ``prediction`` and ``truth`` are integer label grids."""
        pred = np.asarray(prediction)
        true = np.asarray(truth)
        if pred.shape != true.shape:
            raise ValueError(f"shape mismatch: prediction {pred.shape} vs truth {true.shape}")
        c = self.num_classes
        pred = pred.reshape(-1).astype(np.int64)
        true = true.reshape(-1).astype(np.int64)
        if pred.min() < 0 or pred.max() >= c or true.min() < 0 or true.max() >= c:
            raise ValueError(f"labels must lie in [0, {c})")
        cm = np.bincount(true * c + pred, minlength=c * c).reshape(c, c)
        tp = np.diag(cm).copy()
        fn = cm.sum(axis=1) - tp
        fp = cm.sum(axis=0) - tp
        tn = pred.size - tp - fp - fn
        tally = ImageTally(tp=tp, fp=fp, fn=fn, tn=tn)
        self.tallies.append(tally)
        return tally

    def merge(self, other: "ConfusionAccumulator") -> None:
        """Fold another accumulator's images into this one."""
        if other.num_classes != self.num_classes:
            raise ValueError("class count mismatch")
        self.tallies.extend(other.tallies)

    def finalize(self) -> SegmentationScores:
        """Reduce all accumulated images to (mIoU, mPre, mRec, mF1)."""
        if not self.tallies:
            raise ValueError("no images accumulated")
        iou_means: list[float] = []
        pre_means: list[float] = []
        rec_means: list[float] = []
        for c in range(self.num_classes):
            iou_cells: list[float] = []
            pre_cells: list[float] = []
            rec_cells: list[float] = []
            for t in self.tallies:
                tp = int(t.tp[c])
                fp = int(t.fp[c])
                fn = int(t.fn[c])
                if tp == 0 and fp == 0 and fn == 0:
                    continue  # class absent from both grids: cell excluded
                iou_cells.append(tp / (tp + fp + fn))
                pre_cells.append(tp / (tp + fp) if tp + fp else 0.0)
                rec_cells.append(tp / (tp + fn) if tp + fn else 0.0)
            if not iou_cells:
                continue  # class never appears anywhere: dropped from the mean
            k = len(iou_cells)
            iou_means.append(math.fsum(iou_cells) / k)
            pre_means.append(math.fsum(pre_cells) / k)
            rec_means.append(math.fsum(rec_cells) / k)
        if not iou_means:
            raise ValueError("no class appears in any accumulated image")
        f1_means = [
            2.0 * p * r / (p + r) if p + r > 0.0 else 0.0
            for p, r in zip(pre_means, rec_means)
        ]
        n_cls = len(iou_means)
        return SegmentationScores(
            miou=math.fsum(iou_means) / n_cls,
            mpre=math.fsum(pre_means) / n_cls,
            mrec=math.fsum(rec_means) / n_cls,
            mf1=math.fsum(f1_means) / n_cls,
        )
