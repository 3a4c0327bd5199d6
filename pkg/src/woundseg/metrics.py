"""Per-frame confusion counts, Dice/precision/recall and their
mean +/- std aggregation over frames."""

from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class FrameMetrics:
    dice: float
    precision: float
    recall: float
    counts: ConfusionCounts


@dataclass
class AggregateReport:
    """Mean and population std per metric over n frames."""

    n: int
    mean: dict
    std: dict

    def format_row(self, metric: str) -> str:
        return f"{self.mean[metric]:.2f} ± {self.std[metric]:.2f}"


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.dtype != np.bool_ or gt.dtype != np.bool_:
        raise ValueError("masks must be boolean")
    if pred.shape != gt.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def scores(counts: ConfusionCounts) -> FrameMetrics:
    """Dice/precision/recall with explicit degenerate conventions:

    both masks empty -> all scores 1 (a correct "no wound" frame);
    any other zero denominator -> the affected score is 0.
    """
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    if tp == 0 and fp == 0 and fn == 0:
        return FrameMetrics(dice=1.0, precision=1.0, recall=1.0, counts=counts)
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    dice = 2 * tp / (2 * tp + fp + fn)
    return FrameMetrics(dice=dice, precision=precision, recall=recall, counts=counts)


def dice_of_masks(pred: np.ndarray, gt: np.ndarray) -> float:
    return scores(confusion(pred, gt)).dice


def aggregate(frame_metrics) -> AggregateReport:
    """Pooled per-frame mean and population std of each metric."""
    frame_metrics = list(frame_metrics)
    if not frame_metrics:
        raise ValueError("cannot aggregate zero frames")
    mean = {}
    std = {}
    for metric in ("dice", "precision", "recall"):
        values = np.array([getattr(m, metric) for m in frame_metrics], dtype=np.float64)
        mean[metric] = float(values.mean())
        std[metric] = float(values.std())  # population std
    return AggregateReport(n=len(frame_metrics), mean=mean, std=std)
