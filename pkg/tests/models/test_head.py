import math

import numpy as np
import pytest

from app.engine.autodiff import Parameter, fd_check
from app.engine import functional as F
from app.engine.tensor import DType, Tensor
from app.models.head import (
    ClassifierHead,
    Prediction,
    confusion_matrix,
    loss,
    one_hot_labels,
    per_class_accuracy,
    topk_accuracy,
)
from app.utils.exceptions import InvalidParameterError, LabelError


def _prediction(logits) -> Prediction:
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    return Prediction(logits=logits, probs=F.softmax(logits, axis=-1))


def test_head_outputs_probabilities(rng):
    head = ClassifierHead(6, 4, rng, DType.F64)
    pred = head(Tensor(rng.standard_normal((3, 6))))
    assert pred.logits.shape == (3, 4)
    assert np.allclose(pred.probs.data.sum(axis=-1), 1.0)
    assert pred.top1().shape == (3,)


def test_head_needs_two_classes(rng):
    with pytest.raises(InvalidParameterError):
        ClassifierHead(4, 1, rng)


def test_one_hot_labels_validates_range():
    y = one_hot_labels([0, 2], 3)
    assert y.data.tolist() == [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
    with pytest.raises(LabelError):
        one_hot_labels([3], 3)


def test_cross_entropy_of_uniform_prediction_is_log_classes():
    pred = _prediction(np.zeros((2, 4)))
    value = loss(pred, one_hot_labels([1, 3], 4), 'ce').item()
    assert value == pytest.approx(math.log(4))


def test_literal_loss_averages_over_all_entries():
    pred = _prediction(np.zeros((1, 2)))
    # p = 0.5 everywhere: every term is log(0.5)
    value = loss(pred, one_hot_labels([0], 2), 'literal').item()
    assert value == pytest.approx(math.log(2))


def test_loss_is_finite_for_saturated_logits():
    pred = _prediction(np.array([[1000.0, -1000.0]]))
    for mode in ('ce', 'literal'):
        assert np.isfinite(loss(pred, one_hot_labels([1], 2), mode).item())


def test_loss_rejects_invalid_labels():
    pred = _prediction(np.zeros((1, 3)))
    with pytest.raises(LabelError):
        loss(pred, np.array([[1.0, 1.0, 0.0]]))
    with pytest.raises(LabelError):
        loss(pred, np.array([[0.5, 0.5, 0.0]]))
    with pytest.raises(InvalidParameterError):
        loss(pred, one_hot_labels([0], 3), 'hinge')


@pytest.mark.parametrize('mode', ['ce', 'literal'])
def test_loss_gradients(mode, rng):
    logits = Parameter(rng.standard_normal((3, 4)))
    y = one_hot_labels([0, 3, 1], 4)
    assert fd_check(lambda: loss(_prediction(F.mul(logits, 1.0)), y, mode), logits) < 1e-6


def test_topk_accuracy():
    logits = np.array([[0.1, 0.9, 0.0], [0.8, 0.1, 0.1], [0.2, 0.3, 0.5]])
    labels = np.array([1, 2, 1])
    assert topk_accuracy(logits, labels, 1) == pytest.approx(1 / 3)
    assert topk_accuracy(logits, labels, 2) == pytest.approx(2 / 3)
    assert topk_accuracy(logits, labels, 3) == 1.0
    with pytest.raises(InvalidParameterError):
        topk_accuracy(logits, labels, 4)


def test_topk_ties_go_to_lower_index():
    assert topk_accuracy(np.zeros((1, 3)), [0], 1) == 1.0
    assert topk_accuracy(np.zeros((1, 3)), [2], 1) == 0.0


def test_topk_of_empty_batch_is_zero():
    assert topk_accuracy(np.zeros((0, 3)), [], 1) == 0.0


def test_confusion_and_per_class_accuracy():
    matrix = confusion_matrix(np.array([0, 1, 1, 2]), np.array([0, 1, 2, 2]), 4)
    assert matrix.sum() == 4
    assert matrix[2, 1] == 1
    accuracy = per_class_accuracy(matrix)
    assert accuracy[:3].tolist() == [1.0, 1.0, 0.5]
    assert np.isnan(accuracy[3])
