"""
Tests for the softmax classifier used by DNN selection.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial.distance import cdist
from unittest.mock import patch

from app.data.dataset import load_csv, split
from app.exceptions import ClassifierDivergenceError, ClassifierError
from app.gp.partitioner import kmeans_partition
from app.models import Activation, SplitSpec, TrainConfig
from app.selection.classifier import (
    ClassifierModel,
    accuracy,
    forward,
    forward_batch,
    init_classifier,
    loss_and_grad,
    train,
)


def _zeroed(model):
    return ClassifierModel(model.layer_sizes, tuple(np.zeros_like(W) for W in model.weights),
                           tuple(np.zeros_like(b) for b in model.biases), model.activation)


class TestForward:
    """Tests for forward() and forward_batch()."""

    def test_zero_parameters_give_uniform(self):
        model = _zeroed(init_classifier(3, 5, (4,)))
        assert_allclose(forward(model, [0.3, -1.0, 2.0]), np.full(5, 0.2))

    def test_probability_simplex(self, rng):
        model = init_classifier(4, 6, (16, 8), seed=2)
        P = forward_batch(model, rng.normal(0.0, 3.0, size=(100, 4)))
        assert np.all(P > 0)
        assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)

    def test_output_bias_shift_invariance(self, rng):
        model = init_classifier(2, 3, (5,), seed=0)
        shifted = ClassifierModel(model.layer_sizes, model.weights,
                                  model.biases[:-1] + (model.biases[-1] + 7.5,), model.activation)
        X = rng.normal(size=(10, 2))
        assert_allclose(forward_batch(model, X), forward_batch(shifted, X), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            forward(init_classifier(3, 2, (4,)), [1.0, 2.0])

    def test_non_finite_parameters_rejected(self):
        model = init_classifier(2, 2, (3,))
        with pytest.raises(ClassifierError):
            ClassifierModel(model.layer_sizes, (model.weights[0] * np.nan, model.weights[1]),
                            model.biases, model.activation)


class TestLossAndGrad:
    """Tests for loss_and_grad()."""

    def test_uniform_output_loss(self):
        model = _zeroed(init_classifier(2, 4, (3,)))
        loss, _ = loss_and_grad(model, np.ones((3, 2)), np.array([0, 2, 3]))
        assert loss == pytest.approx(np.log(4))

    @pytest.mark.parametrize("activation", [Activation.TANH, Activation.RELU])
    def test_gradients_match_finite_differences(self, activation):
        rng = np.random.default_rng(4)
        model = init_classifier(3, 4, (5,), activation, seed=4)
        model = ClassifierModel(model.layer_sizes, model.weights,
                                tuple(rng.normal(0.0, 0.3, b.shape) for b in model.biases), activation)
        X = rng.normal(size=(6, 3))
        labels = rng.integers(0, 4, 6)
        _, grads = loss_and_grad(model, X, labels)

        params = model.parameters()
        n_layers = len(model.weights)
        h = 1e-5
        for p_index, (param, grad) in enumerate(zip(params, grads)):
            numeric = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                losses = []
                for sign in (1.0, -1.0):
                    perturbed = [p.copy() for p in params]
                    perturbed[p_index][idx] += sign * h
                    candidate = ClassifierModel(model.layer_sizes, tuple(perturbed[:n_layers]),
                                                tuple(perturbed[n_layers:]), activation)
                    losses.append(loss_and_grad(candidate, X, labels)[0])
                numeric[idx] = (losses[0] - losses[1]) / (2 * h)
            assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)

    def test_duplicated_batch_same_loss(self, rng):
        model = init_classifier(2, 3, (4,), seed=1)
        X = rng.normal(size=(5, 2))
        labels = np.array([0, 1, 2, 1, 0])
        single, _ = loss_and_grad(model, X, labels)
        double, _ = loss_and_grad(model, np.vstack((X, X)), np.concatenate((labels, labels)))
        assert double == pytest.approx(single)

    def test_empty_batch(self):
        with pytest.raises(ClassifierError):
            loss_and_grad(init_classifier(2, 2, (3,)), np.empty((0, 2)), np.empty(0, dtype=int))

    def test_label_out_of_range(self):
        with pytest.raises(ClassifierError):
            loss_and_grad(init_classifier(2, 2, (3,)), np.zeros((1, 2)), np.array([2]))


class TestTrain:
    """Tests for train()."""

    @pytest.fixture
    def blobs(self):
        rng = np.random.default_rng(0)
        X = np.concatenate((rng.normal(-2.0, 0.5, 100), rng.normal(2.0, 0.5, 100)))[:, None]
        return X, np.repeat([0, 1], 100)

    def test_separable_blobs(self, blobs):
        X, labels = blobs
        model = train(X, labels, TrainConfig(epochs=200, hidden_layers=(16,), seed=0))
        assert accuracy(model, X, labels) >= 0.95

    def test_training_loss_not_above_initial(self, blobs):
        X, labels = blobs
        config = TrainConfig(epochs=5, hidden_layers=(8,), seed=3, validation_fraction=0.0)
        initial = init_classifier(1, 2, (8,), config.activation, seed=3)
        model = train(X, labels, config)
        assert loss_and_grad(model, X, labels)[0] <= loss_and_grad(initial, X, labels)[0]

    def test_deterministic(self, blobs):
        X, labels = blobs
        config = TrainConfig(epochs=3, hidden_layers=(8,), seed=7)
        a, b = train(X, labels, config), train(X, labels, config)
        for p, q in zip(a.parameters(), b.parameters()):
            assert np.array_equal(p, q)

    def test_shuffled_labels_stay_at_chance(self):
        rng = np.random.default_rng(1)
        M = 4
        X = rng.normal(size=(2000, 2))
        labels = rng.integers(0, M, 2000)
        model = train(X, labels, TrainConfig(epochs=10, hidden_layers=(32, 32), seed=0))
        held_out = rng.normal(size=(2000, 2))
        held_out_labels = rng.integers(0, M, 2000)
        assert abs(accuracy(model, held_out, held_out_labels) - 1.0 / M) <= 0.1

    def test_missing_label_rejected(self):
        X = np.zeros((4, 1))
        with pytest.raises(ClassifierError, match="labels present"):
            train(X, np.array([0, 0, 2, 2]), n_classes=3)

    def test_learning_rate_backoff(self, blobs):
        X, labels = blobs
        fallback = init_classifier(1, 2, (4,), seed=0)
        config = TrainConfig(epochs=1, learning_rate=0.1, max_backoffs=2)
        with patch("app.selection.classifier._train_once",
                   side_effect=[ClassifierDivergenceError("nan"), fallback]) as mock_train:
            model = train(X, labels, config)
        assert model is fallback
        assert mock_train.call_count == 2
        assert mock_train.call_args_list[1].args[4] == pytest.approx(0.05)

    def test_divergence_after_all_backoffs(self, blobs):
        X, labels = blobs
        config = TrainConfig(epochs=1, max_backoffs=1)
        with patch("app.selection.classifier._train_once",
                   side_effect=ClassifierDivergenceError("nan")) as mock_train:
            with pytest.raises(ClassifierDivergenceError):
                train(X, labels, config)
        assert mock_train.call_count == 2

    def test_payload_restores_parameters(self):
        model = init_classifier(3, 4, (5, 6), Activation.TANH, seed=9)
        restored = ClassifierModel.from_payload(model.to_payload())
        assert restored.activation is Activation.TANH
        for p, q in zip(model.parameters(), restored.parameters()):
            assert np.array_equal(p, q)


class TestConcreteLabels:
    """Classifier on K-Means labels of the UCI Concrete data (skipped without the CSV)."""

    def test_beats_chance(self, concrete_csv):
        M = 10
        train_ds, test_ds = split(load_csv(concrete_csv), SplitSpec(train_fraction=0.9, seed=0))
        parts = kmeans_partition(train_ds, M, seed=0)
        model = train(train_ds.features, parts.assignments, TrainConfig(seed=0), n_classes=M)
        assert accuracy(model, train_ds.features, parts.assignments) >= 0.5
        nearest = np.argmin(cdist(test_ds.features, parts.centroids, metric="sqeuclidean"), axis=1)
        assert accuracy(model, test_ds.features, nearest) > 2.0 / M
