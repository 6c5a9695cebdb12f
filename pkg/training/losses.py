"""
Loss Functions

Label-smoothed cross-entropy for writer classification and the triplet loss
used to pretrain the writer-independent stream.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from engine import ops
from engine.tensor import Tensor

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.1
DEFAULT_MARGIN = 0.2
LOG_FLOOR = 1e-12


class LossError(ValueError):
    """Invalid loss input (target out of range, empty batch, ...)."""


@dataclass
class SmoothedLabels:
    """Soft target vector: 1 - epsilon at the target, epsilon / K elsewhere.

    The vector is not renormalised: it sums to 1 - epsilon / K.
    """

    values: np.ndarray
    epsilon: float
    target: int

    @property
    def num_classes(self) -> int:
        return int(self.values.shape[0])

    def total(self) -> float:
        return float(self.values.sum())


def smooth_labels(target: int, num_classes: int, epsilon: float = DEFAULT_EPSILON) -> SmoothedLabels:
    if num_classes < 1:
        raise LossError(f"num_classes must be positive, got {num_classes}")
    if not 0 <= target < num_classes:
        raise LossError(f"target {target} out of range for {num_classes} classes")
    if not 0.0 <= epsilon < 1.0:
        raise LossError(f"epsilon must lie in [0, 1), got {epsilon}")
    values = np.full(num_classes, epsilon / num_classes, dtype=np.float64)
    values[target] = 1.0 - epsilon
    return SmoothedLabels(values, epsilon, int(target))


def smoothed_targets(targets: Sequence[int], num_classes: int, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Rows of smooth_labels for a batch of integer targets, shape [N, K]."""
    return np.stack([smooth_labels(int(t), num_classes, epsilon).values for t in targets])


def fragment_loss(probs: np.ndarray, labels: SmoothedLabels) -> float:
    """-sum_j y_j log p_j for one fragment, with the log clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != labels.values.shape:
        raise LossError(f"score vector has {probs.shape[0]} entries, labels have {labels.num_classes}")
    return float(-(labels.values * np.log(np.maximum(probs, LOG_FLOOR))).sum())


def batch_loss(losses: Union[Sequence[float], Tensor]) -> Union[float, Tensor]:
    """Arithmetic mean over the fragments of a batch; differentiable when given a Tensor."""
    if isinstance(losses, Tensor):
        if losses.size == 0:
            raise LossError("cannot average an empty batch")
        return ops.mean_all(losses)
    values = np.asarray(list(losses), dtype=np.float64)
    if values.size == 0:
        raise LossError("cannot average an empty batch")
    return float(values.mean())


def classification_loss(logits: Tensor, targets: Sequence[int], epsilon: float = DEFAULT_EPSILON) -> Tensor:
    """Mean label-smoothed cross-entropy of a logit batch [N, K]; softmax is fused for stable gradients."""
    if logits.ndim != 2 or logits.shape[0] != len(targets):
        raise LossError(f"logits of shape {logits.shape} do not match {len(targets)} targets")
    soft = smoothed_targets(targets, logits.shape[1], epsilon)
    return batch_loss(ops.smoothed_cross_entropy(logits, soft))


def _rows(x: Tensor) -> Tensor:
    return ops.reshape(x, (1, x.shape[0])) if x.ndim == 1 else x


def triplet_terms(anchor: Tensor, positive: Tensor, negative: Tensor,
                  margin: float = DEFAULT_MARGIN) -> Tensor:
    """Per-triplet hinge max(0, |a - p|² - |a - n|² + m) on unit-normalised embeddings, shape [N]."""
    anchor, positive, negative = _rows(anchor), _rows(positive), _rows(negative)
    if not anchor.shape == positive.shape == negative.shape:
        raise LossError(f"triplet shapes differ: {anchor.shape}, {positive.shape}, {negative.shape}")
    a = ops.l2_normalize(anchor)
    p = ops.l2_normalize(positive)
    n = ops.l2_normalize(negative)
    d_pos = ops.sum_last(ops.square(ops.sub(a, p)))
    d_neg = ops.sum_last(ops.square(ops.sub(a, n)))
    return ops.relu(ops.add_constant(ops.sub(d_pos, d_neg), margin))


def triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor, margin: float = DEFAULT_MARGIN) -> Tensor:
    """Mean triplet hinge over the batch; single vectors are treated as a batch of one."""
    return ops.mean_all(triplet_terms(anchor, positive, negative, margin))
