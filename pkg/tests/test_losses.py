import math

import numpy as np
import pytest

from engine import ops
from engine.tensor import DimensionError, Parameter, Tensor
from training.losses import (LossError, batch_loss, classification_loss, fragment_loss, smooth_labels,
                             triplet_loss, triplet_terms)
from training.optimizers import Adam, AdamState, PlateauScheduler, adam_step


@pytest.mark.parametrize('num_classes', [2, 10, 105])
@pytest.mark.parametrize('epsilon', [0.0, 0.1, 0.5])
def test_smoothed_vector_sums_to_one_minus_epsilon_over_k(num_classes, epsilon):
    labels = smooth_labels(num_classes - 1, num_classes, epsilon)
    assert labels.total() == pytest.approx(1.0 - epsilon / num_classes, abs=1e-12)
    assert labels.values[num_classes - 1] == pytest.approx(1.0 - epsilon)


def test_smooth_labels_known_values():
    np.testing.assert_allclose(smooth_labels(3, 10, 0.1).values, [0.01] * 3 + [0.9] + [0.01] * 6)
    np.testing.assert_allclose(smooth_labels(0, 2, 0.1).values, [0.9, 0.05])
    np.testing.assert_array_equal(smooth_labels(1, 3, 0.0).values, [0.0, 1.0, 0.0])


@pytest.mark.parametrize('target, classes, epsilon', [(3, 3, 0.1), (-1, 3, 0.1), (0, 3, 1.0)])
def test_smooth_labels_rejects(target, classes, epsilon):
    with pytest.raises(LossError):
        smooth_labels(target, classes, epsilon)


def test_fragment_loss_known_values():
    assert fragment_loss([0.5, 0.5], smooth_labels(0, 2, 0.0)) == pytest.approx(math.log(2))
    assert fragment_loss([1.0, 0.0], smooth_labels(0, 2, 0.0)) == pytest.approx(0.0)
    labels = smooth_labels(0, 4, 0.1)
    assert fragment_loss([0.4, 0.1, 0.2, 0.3], labels) == pytest.approx(fragment_loss([0.4, 0.3, 0.1, 0.2], labels))


def test_fused_loss_matches_fragment_loss():
    logits = np.array([[2.0, -1.0, 0.5], [0.0, 0.0, 3.0]])
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    expected = np.mean([fragment_loss(p, smooth_labels(t, 3, 0.1)) for p, t in zip(probs, [0, 2])])
    assert classification_loss(Tensor(logits), [0, 2]).item() == pytest.approx(expected, rel=1e-5)


def test_classification_loss_checks_targets():
    with pytest.raises(LossError):
        classification_loss(Tensor(np.zeros((2, 3))), [0])


def test_batch_loss():
    assert batch_loss([1.0]) == 1.0
    assert batch_loss([1.0, 3.0]) == 2.0
    assert batch_loss([3.0, 1.0, 2.0]) == batch_loss([1.0, 2.0, 3.0])
    with pytest.raises(LossError):
        batch_loss([])


def test_triplet_known_values():
    a, p, n = Tensor([1.0, 0.0]), Tensor([0.0, 1.0]), Tensor([-1.0, 0.0])
    assert triplet_loss(a, p, n, margin=0.2).item() == pytest.approx(0.0)
    assert triplet_loss(a, a, n, margin=0.2).item() == 0.0
    assert triplet_loss(a, p, a, margin=0.2).item() == pytest.approx(2.2, rel=1e-6)


def test_triplet_zero_exactly_when_margin_holds():
    rng = np.random.default_rng(0)
    anchors, positives, negatives = (Tensor(rng.normal(size=(64, 5))) for _ in range(3))
    terms = triplet_terms(anchors, positives, negatives, margin=0.2).data

    def unit(x):
        return x.data / np.linalg.norm(x.data, axis=1, keepdims=True)

    a, p, n = unit(anchors), unit(positives), unit(negatives)
    satisfied = ((a - p) ** 2).sum(axis=1) + 0.2 <= ((a - n) ** 2).sum(axis=1)
    np.testing.assert_array_equal(terms == 0.0, satisfied)


def test_triplet_rejects_zero_embedding():
    with pytest.raises(ops.NormalizationError):
        triplet_loss(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]), Tensor([0.0, 1.0]))


def test_first_adam_step_moves_by_lr_against_the_gradient_sign():
    param = Parameter.create('w', np.array([1.0, 1.0, 1.0]))
    adam_step({'w': param}, {'w': np.array([0.3, -2.0, 1e-3])}, AdamState(lr=0.001))
    np.testing.assert_allclose(param.tensor.data, [0.999, 1.001, 0.999], atol=1e-5)


def test_zero_gradient_leaves_parameters_and_counts_the_step():
    param = Parameter.create('w', np.array([0.5, -0.5]))
    state = AdamState()
    adam_step({'w': param}, {'w': np.zeros(2)}, state)
    np.testing.assert_array_equal(param.tensor.data, np.array([0.5, -0.5], dtype=np.float32))
    assert state.step == 1


def test_identical_parameters_receive_identical_updates():
    a = Parameter.create('a', np.array([0.2, 0.4]))
    b = Parameter.create('b', np.array([0.2, 0.4]))
    grad = np.array([0.7, -0.1])
    state = AdamState()
    for _ in range(3):
        adam_step({'a': a, 'b': b}, {'a': grad, 'b': grad}, state)
    np.testing.assert_array_equal(a.tensor.data, b.tensor.data)


def test_frozen_parameter_is_untouched():
    param = Parameter.create('w', np.array([1.0, 2.0]))
    param.freeze()
    adam_step({'w': param}, {'w': np.ones(2)}, AdamState())
    np.testing.assert_array_equal(param.tensor.data, np.array([1.0, 2.0], dtype=np.float32))


def test_adam_rejects_gradient_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step({'w': Parameter.create('w', np.ones(2))}, {'w': np.ones(3)}, AdamState())


def test_adam_reads_tensor_gradients():
    param = Parameter.create('w', np.array([1.0]))
    param.tensor.grad = np.array([5.0])
    optimizer = Adam({'w': param}, lr=0.01)
    optimizer.step()
    assert param.tensor.data[0] == pytest.approx(0.99, abs=1e-6)
    optimizer.zero_grad()
    assert param.tensor.grad is None


def test_plateau_keeps_lr_while_improving():
    scheduler = PlateauScheduler(lr=0.001, patience=10)
    for accuracy in (0.5, 0.6, 0.7):
        assert scheduler.step(accuracy) == 0.001


def test_plateau_halves_after_patience_stale_epochs():
    scheduler = PlateauScheduler(lr=0.001, patience=10)
    scheduler.step(0.7)
    rates = [scheduler.step(0.7) for _ in range(10)]
    assert rates[:9] == [0.001] * 9
    assert rates[9] == 0.0005
    assert scheduler.best == 0.7
    rates = [scheduler.step(0.6) for _ in range(10)]
    assert rates[-1] == 0.00025


def test_plateau_min_mode_for_pretraining_loss():
    optimizer = Adam({}, lr=0.001)
    scheduler = PlateauScheduler(optimizer, patience=5, mode='min')
    scheduler.step(1.0)
    for _ in range(5):
        scheduler.step(1.2)
    assert optimizer.lr == 0.0005
    assert scheduler.step(0.9) == 0.0005


def test_plateau_rejects_non_finite_metric():
    with pytest.raises(ValueError):
        PlateauScheduler().step(float('nan'))
