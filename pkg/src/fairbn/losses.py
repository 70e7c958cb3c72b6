"""Training objectives: cross-entropy, statistical disparity, weighted total.

The disparity penalty measures, per class, the squared gap between the two
subgroups' mean predicted probabilities inside a mini-batch.  The hard
prediction indicator is relaxed to the softmax probability so the term is
differentiable; a non-differentiable indicator variant is kept for
reporting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fairbn import tensor as T
from fairbn.tensor import Tensor

SD_FALLBACKS = ("zero", "error")


@dataclass
class LossConfig:
    """alpha weights the disparity term; sd_fallback handles one-group batches."""

    alpha: float = 1.0
    sd_fallback: str = "zero"

    def validate(self) -> None:
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.sd_fallback not in SD_FALLBACKS:
            raise ValueError(
                f"unknown sd_fallback '{self.sd_fallback}'; choose from {SD_FALLBACKS}"
            )


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label].

    Computed as a numerically safe log-softmax (max subtraction) followed
    by a one-hot row selection.
    """
    labels = np.asarray(labels, dtype=int)
    if logits.values.ndim != 2:
        raise T.ShapeError(f"logits must be [batch, classes], got {logits.values.shape}")
    batch, n_classes = logits.values.shape
    if labels.shape != (batch,):
        raise T.ShapeError(
            f"labels shape {labels.shape} does not match batch size {batch}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise ValueError(f"label {bad} out of range [0, {n_classes})")
    shift = Tensor(logits.values.max(axis=1, keepdims=True))
    z = logits - shift
    log_probs = z - z.exp().sum(axis=1, keepdims=True).log()
    onehot = np.zeros((batch, n_classes))
    onehot[np.arange(batch), labels] = 1.0
    picked = (log_probs * Tensor(onehot)).sum(axis=1)
    return -picked.mean()


def _validate_prob_rows(probs: np.ndarray) -> None:
    if probs.ndim != 2:
        raise T.ShapeError(f"probabilities must be [batch, classes], got {probs.shape}")
    if np.any(probs < 0):
        raise ValueError("probability rows must be nonnegative")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        worst = sums[np.argmax(np.abs(sums - 1.0))]
        raise ValueError(f"probability rows must sum to 1 within 1e-6, got {worst}")


def statistical_disparity(probs: Tensor, attrs, cfg: LossConfig | None = None) -> Tensor:
    """Sum over classes of the squared gap between group mean probabilities.

    If the mini-batch lacks one attribute group, the configured fallback
    applies (default: the term contributes 0).
    """
    cfg = cfg if cfg is not None else LossConfig()
    cfg.validate()
    _validate_prob_rows(probs.values)
    attrs = np.asarray(attrs, dtype=int)
    idx0 = np.flatnonzero(attrs == 0)
    idx1 = np.flatnonzero(attrs == 1)
    if idx0.size == 0 or idx1.size == 0:
        if cfg.sd_fallback == "zero":
            return Tensor(0.0)
        raise ValueError(
            "statistical disparity needs both attribute groups in the batch "
            f"(sizes were {idx0.size} and {idx1.size})"
        )
    mean0 = T.take_rows(probs, idx0).mean(axis=0)
    mean1 = T.take_rows(probs, idx1).mean(axis=0)
    return (mean0 - mean1).square().sum()


def statistical_disparity_hard(preds, attrs, num_classes: int) -> float:
    """Indicator-based disparity over hard predictions (reporting only)."""
    preds = np.asarray(preds, dtype=int)
    attrs = np.asarray(attrs, dtype=int)
    rate_gaps = []
    mask0 = attrs == 0
    mask1 = attrs == 1
    if not mask0.any() or not mask1.any():
        return 0.0
    for c in range(num_classes):
        r0 = float(np.mean(preds[mask0] == c))
        r1 = float(np.mean(preds[mask1] == c))
        rate_gaps.append((r0 - r1) ** 2)
    return float(sum(rate_gaps))


def total_loss(ce: Tensor, sd: Tensor, cfg: LossConfig) -> Tensor:
    """ce + alpha * sd."""
    cfg.validate()
    return ce + cfg.alpha * sd
