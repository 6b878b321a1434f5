"""Segmentation quality metrics (Dice, Jaccard, sensitivity, specificity)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fileio import atomic_write

METRIC_NAMES = ("dice", "jaccard", "sensitivity", "specificity")


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred_mask, truth_mask, eval_mask=None):
    """Pixel counts over the evaluated region (positive = tumor)."""
    pred = np.asarray(pred_mask, dtype=bool)
    truth = np.asarray(truth_mask, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"pred {pred.shape} vs truth {truth.shape}")
    if eval_mask is None:
        eval_mask = np.ones(pred.shape, dtype=bool)
    else:
        eval_mask = np.asarray(eval_mask, dtype=bool)
        if eval_mask.shape != pred.shape:
            raise ValueError(f"pred {pred.shape} vs eval mask {eval_mask.shape}")
    pred = pred[eval_mask]
    truth = truth[eval_mask]
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(numerator, denominator):
    # 0/0 means perfect agreement on an absent class
    return 1.0 if denominator == 0 else numerator / denominator


def dice(counts):
    return _ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn)


def jaccard(counts):
    return _ratio(counts.tp, counts.tp + counts.fp + counts.fn)


def sensitivity(counts):
    return _ratio(counts.tp, counts.tp + counts.fn)


def specificity(counts):
    return _ratio(counts.tn, counts.tn + counts.fp)


def all_metrics(counts):
    return {
        "dice": dice(counts),
        "jaccard": jaccard(counts),
        "sensitivity": sensitivity(counts),
        "specificity": specificity(counts),
    }


def format_report(metrics, counts=None):
    """Aligned plain-text table of metric values (6 decimal places)."""
    width = max(len(name) for name in metrics)
    lines = [f"{name:<{width}}  {value:.6f}" for name, value in metrics.items()]
    if counts is not None:
        lines.append(
            f"{'counts':<{width}}  TP={counts.tp} FP={counts.fp} "
            f"FN={counts.fn} TN={counts.tn}"
        )
    return "\n".join(lines) + "\n"


def format_machine(metrics):
    """Machine-readable key-value lines: one ``metric=value`` per line."""
    return "".join(f"{name}={value:.6f}\n" for name, value in metrics.items())


def write_metrics(path, metrics):
    with atomic_write(path) as handle:
        handle.write(format_machine(metrics).encode())


def read_metrics(path):
    values = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            name, _, value = line.partition("=")
            values[name.strip()] = float(value)
    return values
