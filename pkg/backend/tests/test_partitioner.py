"""
Tests for K-Means and random partitioning.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.data.dataset import Dataset
from app.exceptions import PartitionError
from app.gp.partitioner import (
    PartitionModel,
    kmeans_partition,
    make_partition,
    partition_from_labels,
    random_partition,
)
from app.models import PartitionMethod


@pytest.fixture
def blobs(rng):
    centers = np.array([[-5.0, 0.0], [0.0, 5.0], [5.0, 0.0]])
    X = np.vstack([c + 0.3 * rng.normal(size=(30, 2)) for c in centers])
    return Dataset.from_raw(X, rng.normal(size=90), standardize=False)


def _assert_partition(parts: PartitionModel, n: int, M: int):
    sets = parts.index_sets()
    assert len(sets) == M
    assert all(s.size > 0 for s in sets)
    assert np.array_equal(np.sort(np.concatenate(sets)), np.arange(n))


class TestKmeansPartition:
    """Tests for kmeans_partition()."""

    @pytest.mark.parametrize("M", [1, 2, 3, 7])
    def test_disjoint_and_exhaustive(self, blobs, M):
        _assert_partition(kmeans_partition(blobs, M, seed=0), blobs.n, M)

    def test_recovers_separated_blobs(self, blobs):
        parts = kmeans_partition(blobs, 3, seed=0)
        assert sorted(parts.sizes) == [30, 30, 30]
        for block in range(3):
            labels = parts.assignments[block * 30:(block + 1) * 30]
            assert np.unique(labels).size == 1

    def test_centroids_are_member_means(self, blobs):
        parts = kmeans_partition(blobs, 4, seed=2)
        for i, idx in enumerate(parts.index_sets()):
            assert_allclose(parts.centroids[i], blobs.features[idx].mean(axis=0))

    def test_objective_non_increasing(self, blobs):
        history = np.array(kmeans_partition(blobs, 5, seed=1).objective_history)
        assert np.all(np.diff(history) <= 1e-9)

    def test_deterministic(self, blobs):
        a = kmeans_partition(blobs, 4, seed=3)
        b = kmeans_partition(blobs, 4, seed=3)
        assert np.array_equal(a.assignments, b.assignments)

    def test_duplicate_points_no_empty_cluster(self):
        X = np.vstack([np.zeros((10, 1)), np.ones((2, 1))])
        ds = Dataset.from_raw(X, np.arange(12.0), standardize=False)
        _assert_partition(kmeans_partition(ds, 4, seed=0), 12, 4)

    def test_one_point_per_partition(self, blobs):
        small = blobs.rows(np.arange(5))
        parts = kmeans_partition(small, 5, seed=0)
        assert parts.sizes == [1, 1, 1, 1, 1]

    def test_too_many_partitions(self, blobs):
        with pytest.raises(PartitionError):
            kmeans_partition(blobs, blobs.n + 1)
        with pytest.raises(PartitionError):
            kmeans_partition(blobs, 0)


class TestRandomPartition:
    """Tests for random_partition()."""

    def test_balanced_sizes(self, blobs):
        parts = random_partition(blobs, 4, seed=0)
        _assert_partition(parts, blobs.n, 4)
        assert max(parts.sizes) - min(parts.sizes) <= 1

    def test_make_partition_dispatch(self, blobs):
        assert make_partition(blobs, 3, PartitionMethod.RANDOM).method is PartitionMethod.RANDOM
        assert make_partition(blobs, 3, "kmeans").method is PartitionMethod.KMEANS


class TestPartitionModel:
    """Tests for PartitionModel validation."""

    def test_empty_partition_rejected(self):
        with pytest.raises(PartitionError, match="empty"):
            PartitionModel(np.array([0, 0, 2]), np.zeros((3, 1)), PartitionMethod.RANDOM, 0)

    def test_from_labels(self):
        X = np.array([[0.0], [2.0], [10.0]])
        parts = partition_from_labels(X, np.array([0, 0, 1]))
        assert_allclose(parts.centroids, [[1.0], [10.0]])
        assert parts.sizes == [2, 1]
