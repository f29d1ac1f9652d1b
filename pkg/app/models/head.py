"""
Classification head, training losses and accuracy metrics.

Two loss modes are provided:
    ce       standard softmax cross-entropy, -(1/B) sum log p[true]
    literal  per-class binary form, -(1/(B*C')) sum [y log p + (1-y) log(1-p)]
Both clamp probabilities at eps inside the logarithms.
"""

from __future__ import annotations

import math

from dataclasses import dataclass
from typing import Literal

import numpy as np

from app.engine import functional as F
from app.engine.tensor import DType, Tensor, as_tensor
from app.models.layers import LayerNorm, Linear, Module
from app.utils.exceptions import InvalidParameterError, LabelError, ShapeMismatchError


LossMode = Literal['ce', 'literal']
LOG_EPS = 1e-12


@dataclass
class Prediction:
    logits: Tensor
    probs: Tensor

    @property
    def num_classes(self) -> int:
        return self.logits.shape[-1]

    def top1(self) -> np.ndarray:
        return F.argmax_indices(self.logits, axis=-1)


class ClassifierHead(Module):
    """LayerNorm -> linear to C' logits -> softmax, on pooled fused features [B, width]."""

    def __init__(self, width: int, num_classes: int, rng: np.random.Generator, dtype: DType = DType.F32, eps: float = 1e-5):
        if num_classes < 2:
            raise InvalidParameterError('num_classes', num_classes, 'need at least 2 classes')
        self.norm = LayerNorm(width, dtype, eps)
        self.fc = Linear(width, num_classes, rng, dtype)

    def forward(self, features: Tensor) -> Prediction:
        logits = self.fc(self.norm(features))
        return Prediction(logits=logits, probs=F.softmax(logits, axis=-1))


def validate_one_hot(y: np.ndarray, num_classes: int) -> None:
    if y.ndim != 2 or y.shape[1] != num_classes:
        raise LabelError(f'expected shape [B, {num_classes}], got {y.shape}')
    if not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
        raise LabelError('every row must contain exactly one 1 and zeros elsewhere')


def one_hot_labels(labels: np.ndarray | list[int], num_classes: int, dtype: DType = DType.F64) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f'class index out of range [0, {num_classes})')
    return Tensor(F.one_hot(labels, num_classes, dtype.numpy))


def loss(pred: Prediction, y: Tensor | np.ndarray, mode: LossMode = 'ce', eps: float = LOG_EPS) -> Tensor:
    """
    Scalar training loss.

    Args:
        pred: Head output.
        y: One-hot labels [B, C'].
        mode: 'ce' (softmax cross-entropy) or 'literal' (per-class binary form).
        eps: Lower clamp applied inside every log.

    Raises:
        LabelError: If y is not one-hot.
    """
    y = as_tensor(y, dtype=pred.logits.dtype)
    if y.shape != pred.logits.shape:
        raise ShapeMismatchError('loss', pred.logits.shape, y.shape, 'labels must match the logits')
    validate_one_hot(y.data, pred.num_classes)
    b, c = y.shape

    if mode == 'ce':
        log_p = F.clamp_min(F.log_softmax(pred.logits, axis=-1), math.log(eps))
        return F.mul(F.reduce('sum', F.mul(y, log_p)), -1.0 / b)
    if mode == 'literal':
        log_p = F.log(F.clamp_min(pred.probs, eps))
        log_q = F.log(F.clamp_min(F.add(F.neg(pred.probs), 1.0), eps))
        negatives = F.add(F.neg(y), 1.0)
        total = F.add(F.mul(y, log_p), F.mul(negatives, log_q))
        return F.mul(F.reduce('sum', total), -1.0 / (b * c))
    raise InvalidParameterError('mode', mode, "expected 'ce' or 'literal'")


def topk_indices(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest logits per row; ties go to the lower index."""
    return np.argsort(-logits, axis=-1, kind='stable')[:, :k]


def topk_accuracy(pred: Prediction | np.ndarray, labels: np.ndarray | list[int], k: int = 1) -> float:
    """Fraction of samples whose true class is among the k highest logits."""
    logits = pred.logits.data if isinstance(pred, Prediction) else np.asarray(pred)
    labels = np.asarray(labels, dtype=np.int64)
    if k < 1 or k > logits.shape[-1]:
        raise InvalidParameterError('k', k, f'must be in [1, {logits.shape[-1]}]')
    if len(labels) == 0:
        return 0.0
    hits = (topk_indices(logits, k) == labels[:, None]).any(axis=1)
    return float(hits.mean())


def confusion_matrix(predicted: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """counts[true, predicted]."""
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(labels, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
    return counts


def per_class_accuracy(matrix: np.ndarray) -> np.ndarray:
    """Diagonal over row sums; NaN for classes without samples."""
    totals = matrix.sum(axis=1)
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(totals > 0, np.diag(matrix) / np.maximum(totals, 1), np.nan)
