"""
Tests for KNN, DNN, static-graph and full-set expert selection.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.exceptions import ClassifierError, SelectionError
from app.models import SelectorKind, TrainConfig
from app.selection.classifier import init_classifier, train
from app.selection.selectors import (
    SelectorModel,
    fit_static_graph,
    precision_degree_ranking,
    select,
    select_batch,
    select_dnn,
    select_knn,
)

CENTROIDS_1D = np.array([[0.0], [1.0], [2.0]])


def _assert_valid(ids, k, M):
    assert ids.shape[-1] == k
    for row in np.atleast_2d(ids):
        assert len(set(row.tolist())) == k
        assert row.min() >= 0 and row.max() < M


class TestSelectKnn:
    """Tests for select_knn()."""

    def test_closest_centroids(self):
        result = select_knn(SelectorModel.knn(CENTROIDS_1D, 2), [0.1])
        assert result.expert_ids.tolist() == [0, 1]
        assert_allclose(result.scores, [0.1, 0.9])

    def test_exact_centroid(self):
        result = select_knn(SelectorModel.knn(CENTROIDS_1D, 1), [2.0])
        assert result.expert_ids.tolist() == [2]
        assert result.scores[0] == 0.0

    def test_tie_goes_to_lower_index(self):
        result = select_knn(SelectorModel.knn(CENTROIDS_1D, 1), [0.5])
        assert result.expert_ids.tolist() == [0]

    def test_all_experts_when_k_equals_m(self, rng):
        model = SelectorModel.knn(rng.normal(size=(5, 2)), 5)
        ids, _ = select_batch(model, rng.normal(size=(20, 2)))
        assert all(sorted(row) == [0, 1, 2, 3, 4] for row in ids.tolist())

    def test_permutation_equivariance(self, rng):
        centroids = rng.normal(size=(6, 3))
        X = rng.normal(size=(30, 3))
        perm = rng.permutation(6)
        ids, _ = select_batch(SelectorModel.knn(centroids, 3), X)
        permuted_ids, _ = select_batch(SelectorModel.knn(centroids[perm], 3), X)
        assert np.array_equal(perm[permuted_ids], ids)

    def test_dimension_mismatch(self):
        with pytest.raises(SelectionError, match="dimension mismatch"):
            select_knn(SelectorModel.knn(CENTROIDS_1D, 1), [0.0, 1.0])

    def test_k_out_of_range(self):
        with pytest.raises(SelectionError):
            SelectorModel.knn(CENTROIDS_1D, 4)
        with pytest.raises(SelectionError):
            SelectorModel.knn(CENTROIDS_1D, 0)


class TestSelectDnn:
    """Tests for select_dnn()."""

    def test_top_probabilities(self, rng):
        classifier = init_classifier(2, 4, (8,), seed=0)
        x = rng.normal(size=2)
        result = select_dnn(SelectorModel.dnn(classifier, 2), x)
        _assert_valid(result.expert_ids, 2, 4)
        assert result.scores[0] >= result.scores[1]

    def test_uniform_probabilities_tie_break(self):
        classifier = init_classifier(2, 3, (4,), seed=0)
        zeroed = type(classifier)(classifier.layer_sizes,
                                  tuple(np.zeros_like(W) for W in classifier.weights),
                                  classifier.biases, classifier.activation)
        result = select_dnn(SelectorModel.dnn(zeroed, 2), [0.3, -0.2])
        assert result.expert_ids.tolist() == [0, 1]

    def test_separable_blobs(self):
        rng = np.random.default_rng(0)
        X = np.concatenate((rng.normal(-3.0, 0.5, 100), rng.normal(3.0, 0.5, 100)))[:, None]
        labels = np.repeat([0, 1], 100)
        classifier = train(X, labels, TrainConfig(epochs=200, learning_rate=1e-2, hidden_layers=(8,), seed=0))
        assert select_dnn(SelectorModel.dnn(classifier, 1), [3.0]).expert_ids.tolist() == [1]
        assert select_dnn(SelectorModel.dnn(classifier, 1), [-3.0]).expert_ids.tolist() == [0]

    def test_untrained_classifier(self):
        model = SelectorModel(SelectorKind.DNN, 1, 3)
        with pytest.raises(ClassifierError):
            select_dnn(model, [0.0])


class TestStaticGraph:
    """Tests for precision_degree_ranking() and fit_static_graph()."""

    def test_strongly_coupled_block_selected(self):
        weak = np.array([[1.0, 0.09], [0.09, 1.0]])
        strong = np.array([[1.0, 0.9], [0.9, 1.0]])
        S = np.block([[weak, np.zeros((2, 2))], [np.zeros((2, 2)), strong]])
        ids, importance = precision_degree_ranking(S, 2)
        assert sorted(ids.tolist()) == [2, 3]
        assert importance.sum() == pytest.approx(1.0)

    def test_identical_predictions_tie_by_index(self):
        ids, importance = precision_degree_ranking(np.full((4, 4), 2.0), 2)
        assert ids.tolist() == [0, 1]
        assert np.unique(importance).size == 1

    def test_k_equals_m(self, rng):
        B = rng.normal(size=(2, 2))
        ids, _ = precision_degree_ranking(B @ B.T, 2)
        assert sorted(ids.tolist()) == [0, 1]

    def test_fit_on_model(self, small_model, test_inputs):
        selector = fit_static_graph(small_model, 2)
        assert selector.kind is SelectorKind.STATIC_GRAPH
        _assert_valid(np.array(selector.static_set), 2, 3)
        ids, _ = select_batch(selector, test_inputs)
        assert np.all(ids == ids[0])

    def test_too_few_calibration_points(self, small_model):
        with pytest.raises(SelectionError):
            fit_static_graph(small_model, 2, calibration_X=np.zeros((1, 2)))


class TestSelect:
    """Tests for select() dispatch and the selection contracts."""

    def test_static_ignores_input(self, small_model):
        selector = fit_static_graph(small_model, 2)
        a = select(selector, [0.0, 0.0])
        b = select(selector, [1.5, -1.0])
        assert np.array_equal(a.expert_ids, b.expert_ids)

    def test_knn_distinct_points_differ(self):
        model = SelectorModel.knn(CENTROIDS_1D, 1)
        assert select(model, [0.1]).expert_ids.tolist() != select(model, [1.9]).expert_ids.tolist()

    def test_full_selector_returns_all(self):
        result = select(SelectorModel.full(4), [0.0])
        assert result.expert_ids.tolist() == [0, 1, 2, 3]

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_cardinality_and_determinism(self, small_model, test_inputs, k):
        classifier = init_classifier(2, 3, (6,), seed=1)
        selectors = [
            SelectorModel.knn(small_model.partition.centroids, k),
            SelectorModel.dnn(classifier, k),
            fit_static_graph(small_model, k),
        ]
        for selector in selectors:
            first, _ = select_batch(selector, test_inputs)
            second, _ = select_batch(selector, test_inputs)
            _assert_valid(first, k, 3)
            assert np.array_equal(first, second)
