"""Evaluation: utility metrics, group fairness criteria, and the FATE score.

Fairness criteria compare group-conditional prediction rates:

* eopp0 - absolute gap in true-negative rate between the two groups,
* eopp1 - absolute gap in true-positive rate,
* eodd  - the positive-prediction-rate gap conditioned on each ground
  truth outcome, aggregated per a configurable rule (max by default).

Binary tasks use the positive class directly; tasks with three or more
classes are reduced one-vs-rest per class and macro-averaged over the
classes where both groups carry at least one positive and one negative.

FATE scores a mitigation run against a baseline run as the relative
accuracy change minus lambda times the relative fairness-criterion change.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

EODD_AGGREGATIONS = ("max", "sum", "mean")
CRITERIA = ("eopp0", "eopp1", "eodd")


class FateUndefinedError(ValueError):
    """FATE is undefined because a baseline denominator is zero."""


@dataclass
class GroupConfusion:
    """One-vs-rest confusion counts per (class, group).

    Arrays are [num_classes, 2] with group index on the second axis.
    """

    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray
    num_classes: int
    n_per_group: tuple[int, int]


class FairnessCriteria(NamedTuple):
    eopp0: float
    eopp1: float
    eodd: float


class UtilityMetrics(NamedTuple):
    accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass
class MetricsReport:
    """Flat record of one evaluation pass."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    eopp0: float
    eopp1: float
    eodd: float
    accuracy_gap: float
    n_samples_a0: int
    n_samples_a1: int
    sd_soft: float = 0.0
    sd_hard: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "eopp0": self.eopp0,
            "eopp1": self.eopp1,
            "eodd": self.eodd,
            "accuracy_gap": self.accuracy_gap,
            "sd_soft": self.sd_soft,
            "sd_hard": self.sd_hard,
            "n_samples_a0": float(self.n_samples_a0),
            "n_samples_a1": float(self.n_samples_a1),
        }


@dataclass
class FateConfig:
    lambda_: float = 1.0
    criterion: str = "eopp0"

    def validate(self) -> None:
        if self.lambda_ < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lambda_}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion '{self.criterion}'; choose from {CRITERIA}")


@dataclass
class FateReport:
    """FATE per criterion; None marks a not-available entry."""

    fate_eopp0: float | None = None
    fate_eopp1: float | None = None
    fate_eodd: float | None = None

    def as_dict(self) -> dict[str, float | None]:
        return {
            "fate_eopp0": self.fate_eopp0,
            "fate_eopp1": self.fate_eopp1,
            "fate_eodd": self.fate_eodd,
        }


def _check_lengths(preds, labels, attrs=None) -> None:
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} preds vs {len(labels)} labels")
    if attrs is not None and len(attrs) != len(labels):
        raise ValueError(f"length mismatch: {len(attrs)} attrs vs {len(labels)} labels")


def confusion(preds, labels, attrs, num_classes: int) -> GroupConfusion:
    """Exact one-vs-rest counts per (class, group)."""
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    attrs = np.asarray(attrs, dtype=int)
    _check_lengths(preds, labels, attrs)
    for name, arr, hi in (("pred", preds, num_classes), ("label", labels, num_classes), ("attr", attrs, 2)):
        if arr.size and (arr.min() < 0 or arr.max() >= hi):
            raise ValueError(f"{name} values must lie in [0, {hi})")
    tp = np.zeros((num_classes, 2), dtype=np.int64)
    fp = np.zeros_like(tp)
    tn = np.zeros_like(tp)
    fn = np.zeros_like(tp)
    for a in (0, 1):
        mask = attrs == a
        p, y = preds[mask], labels[mask]
        for c in range(num_classes):
            pred_pos = p == c
            true_pos = y == c
            tp[c, a] = np.sum(pred_pos & true_pos)
            fp[c, a] = np.sum(pred_pos & ~true_pos)
            fn[c, a] = np.sum(~pred_pos & true_pos)
            tn[c, a] = np.sum(~pred_pos & ~true_pos)
    return GroupConfusion(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        num_classes=num_classes,
        n_per_group=(int(np.sum(attrs == 0)), int(np.sum(attrs == 1))),
    )


def _evaluated_classes(num_classes: int) -> range:
    # Binary tasks reduce to the positive class; the class-0 view is its mirror.
    return range(1, 2) if num_classes == 2 else range(num_classes)


def fairness_criteria(conf: GroupConfusion, aggregation: str = "max") -> FairnessCriteria:
    """(eopp0, eopp1, eodd) macro-averaged over evaluable classes.

    A class is evaluable when both groups hold at least one positive and
    one negative for it; other classes are skipped and logged.
    """
    if aggregation not in EODD_AGGREGATIONS:
        raise ValueError(
            f"unknown aggregation '{aggregation}'; choose from {EODD_AGGREGATIONS}"
        )
    eopp0_vals, eopp1_vals, eodd_vals = [], [], []
    skipped = []
    for c in _evaluated_classes(conf.num_classes):
        pos = conf.tp[c] + conf.fn[c]
        neg = conf.tn[c] + conf.fp[c]
        if np.any(pos == 0) or np.any(neg == 0):
            skipped.append(c)
            continue
        tpr = conf.tp[c] / pos
        tnr = conf.tn[c] / neg
        fpr = conf.fp[c] / neg
        tpr_gap = abs(tpr[1] - tpr[0])
        tnr_gap = abs(tnr[1] - tnr[0])
        fpr_gap = abs(fpr[1] - fpr[0])
        eopp0_vals.append(tnr_gap)
        eopp1_vals.append(tpr_gap)
        if aggregation == "max":
            eodd_vals.append(max(tpr_gap, fpr_gap))
        elif aggregation == "sum":
            eodd_vals.append(tpr_gap + fpr_gap)
        else:
            eodd_vals.append((tpr_gap + fpr_gap) / 2.0)
    if not eopp0_vals:
        raise ValueError(
            "no evaluable class: every class lacks positives or negatives in some group"
        )
    if skipped:
        logger.info("fairness criteria skipped class(es) %s", skipped)
    return FairnessCriteria(
        eopp0=float(np.mean(eopp0_vals)),
        eopp1=float(np.mean(eopp1_vals)),
        eodd=float(np.mean(eodd_vals)),
    )


def utility_metrics(preds, labels, num_classes: int) -> UtilityMetrics:
    """Overall accuracy plus macro one-vs-rest precision/recall/F1.

    Macro averages run over the classes present in labels or predictions;
    0/0 rates follow the -> 0 convention and are logged.
    """
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    _check_lengths(preds, labels)
    if preds.size == 0:
        raise ValueError("utility metrics need at least one sample")
    accuracy = float(np.mean(preds == labels))
    present = sorted(set(labels.tolist()) | set(preds.tolist()))
    precisions, recalls, f1s = [], [], []
    zero_conv = []
    for c in present:
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        prec = tp / (tp + fp) if (tp + fp) > 0 else 0.0
        rec = tp / (tp + fn) if (tp + fn) > 0 else 0.0
        if (tp + fp) == 0 or (tp + fn) == 0:
            zero_conv.append(c)
        f1 = 2 * prec * rec / (prec + rec) if (prec + rec) > 0 else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)
    if zero_conv:
        logger.info("0/0 convention applied for class(es) %s", zero_conv)
    return UtilityMetrics(
        accuracy=accuracy,
        precision=float(np.mean(precisions)),
        recall=float(np.mean(recalls)),
        f1=float(np.mean(f1s)),
    )


def accuracy_gap(preds, labels, attrs) -> float:
    """|accuracy(A=1) - accuracy(A=0)|."""
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    attrs = np.asarray(attrs, dtype=int)
    _check_lengths(preds, labels, attrs)
    accs = []
    for a in (0, 1):
        mask = attrs == a
        if not mask.any():
            raise ValueError(f"accuracy gap undefined: group {a} is empty")
        accs.append(float(np.mean(preds[mask] == labels[mask])))
    return abs(accs[1] - accs[0])


def fate(
    acc_m: float,
    acc_b: float,
    fc_m: float,
    fc_b: float,
    cfg: FateConfig | None = None,
) -> float:
    """(acc_m - acc_b)/acc_b - lambda * (fc_m - fc_b)/fc_b."""
    cfg = cfg if cfg is not None else FateConfig()
    cfg.validate()
    if acc_b == 0:
        raise FateUndefinedError("FATE undefined: baseline accuracy is zero")
    if fc_b == 0:
        raise FateUndefinedError("FATE undefined: baseline fairness criterion is zero")
    return (acc_m - acc_b) / acc_b - cfg.lambda_ * (fc_m - fc_b) / fc_b
