"""Thresholded evaluation metrics over binary masks.

Every reported number derives from TP/FP/TN/FN pixel tallies, except AUC,
which sweeps 256 evenly spaced thresholds over the raw scores and takes
the trapezoidal area under the (FPR, TPR) curve. Degenerate denominators
(an empty reference class) score 1.0 when the prediction agrees that the
class is empty, else 0.0.

Reports carry per-image values, their mean (the primary figure) and the
same metrics pooled over all pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

METRIC_NAMES = ("jaccard", "f1", "accuracy", "sensitivity", "specificity", "auc")
AUC_THRESHOLDS = 256


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


def _as_array(x) -> np.ndarray:
    data = getattr(x, "data", x)
    return np.asarray(data)


def confusion(pred, target, threshold: float = 0.5) -> ConfusionCounts:
    """Tally pixels; a pixel counts positive when its score >= threshold."""
    p = _as_array(pred)
    t = _as_array(target)
    if p.shape != t.shape:
        raise ShapeError(f"confusion: shapes differ, {p.shape} vs {t.shape}")
    pp = p >= threshold
    tt = t > 0.5
    tp = int(np.count_nonzero(pp & tt))
    fp = int(np.count_nonzero(pp & ~tt))
    fn = int(np.count_nonzero(~pp & tt))
    tn = int(np.count_nonzero(~pp & ~tt))
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num: int, den: int, pred_empty: bool) -> float:
    if den == 0:
        return 1.0 if pred_empty else 0.0
    return num / den


def counts_metrics(c: ConfusionCounts) -> dict:
    """Jaccard, F1, accuracy, sensitivity and specificity from tallies."""
    return {
        "jaccard": _ratio(c.tp, c.tp + c.fp + c.fn, c.fp == 0),
        "f1": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.fp == 0),
        "accuracy": _ratio(c.tp + c.tn, c.total, True),
        "sensitivity": _ratio(c.tp, c.tp + c.fn, c.fp == 0),
        "specificity": _ratio(c.tn, c.tn + c.fp, c.fn == 0),
    }


def roc_auc(scores, target) -> float:
    """Trapezoidal ROC area over evenly spaced score thresholds."""
    s = _as_array(scores).astype(np.float64).ravel()
    t = _as_array(target).ravel() > 0.5
    n_pos = int(np.count_nonzero(t))
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5  # single-class reference: ranking is unmeasurable
    pos_sorted = np.sort(s[t])
    neg_sorted = np.sort(s[~t])
    thresholds = np.linspace(0.0, 1.0, AUC_THRESHOLDS)[::-1]
    tpr = (n_pos - np.searchsorted(pos_sorted, thresholds, side="left")) / n_pos
    fpr = (n_neg - np.searchsorted(neg_sorted, thresholds, side="left")) / n_neg
    fpr = np.concatenate(([0.0], fpr, [1.0]))
    tpr = np.concatenate(([0.0], tpr, [1.0]))
    return float(np.trapezoid(tpr, fpr))


@dataclass
class ImageMetrics:
    image_id: str
    values: dict
    counts: ConfusionCounts

    def to_record(self) -> dict:
        rec = {"id": self.image_id}
        rec.update({k: self.values[k] for k in METRIC_NAMES})
        rec.update({"tp": self.counts.tp, "fp": self.counts.fp,
                    "tn": self.counts.tn, "fn": self.counts.fn})
        return rec


@dataclass
class MetricReport:
    per_image: list
    mean: dict
    pooled: dict

    def format_table(self) -> str:
        header = f"{'scope':<12}" + "".join(f"{n:>14}" for n in METRIC_NAMES)
        lines = [header]
        for label, row in (("mean", self.mean), ("pooled", self.pooled)):
            lines.append(f"{label:<12}" + "".join(
                f"{row[n]:>14.4f}" for n in METRIC_NAMES))
        return "\n".join(lines)


def build_report(items, threshold: float = 0.5) -> MetricReport:
    """items: iterable of (image_id, scores, target) triples."""
    per_image = []
    pooled_counts = ConfusionCounts(0, 0, 0, 0)
    all_scores = []
    all_targets = []
    for image_id, scores, target in items:
        c = confusion(scores, target, threshold)
        values = counts_metrics(c)
        values["auc"] = roc_auc(scores, target)
        per_image.append(ImageMetrics(str(image_id), values, c))
        pooled_counts = pooled_counts + c
        all_scores.append(_as_array(scores).ravel())
        all_targets.append(_as_array(target).ravel())
    if not per_image:
        raise ShapeError("cannot build a metric report from zero images")
    mean = {n: float(np.mean([im.values[n] for im in per_image]))
            for n in METRIC_NAMES}
    pooled = counts_metrics(pooled_counts)
    pooled["auc"] = roc_auc(np.concatenate(all_scores), np.concatenate(all_targets))
    return MetricReport(per_image, mean, pooled)
