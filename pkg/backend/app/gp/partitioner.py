"""
Disjoint partitioning of the training inputs into M expert subsets.

K-Means (k-means++ seeding, Lloyd iterations) or a seeded random split into
near-equal blocks. Both expose per-partition centroids used by KNN selection.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import kmeans_plusplus

from app.data.dataset import Dataset
from app.exceptions import PartitionError
from app.models import PartitionMethod

logger = logging.getLogger('dgpselect')

MAX_LLOYD_ITERATIONS = 300


@dataclass(frozen=True)
class PartitionModel:
    """Expert labels (0..M-1) per training point plus partition centroids."""
    assignments: np.ndarray
    centroids: np.ndarray
    method: PartitionMethod
    seed: int
    n_iter: int = 0
    objective_history: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        labels = np.asarray(self.assignments, dtype=int)
        centroids = np.atleast_2d(np.asarray(self.centroids, dtype=float))
        M = centroids.shape[0]
        if labels.ndim != 1 or labels.size == 0:
            raise PartitionError("assignments must be a non-empty vector")
        if labels.min() < 0 or labels.max() >= M:
            raise PartitionError(f"labels must lie in 0..{M - 1}")
        sizes = np.bincount(labels, minlength=M)
        if np.any(sizes == 0):
            raise PartitionError(f"empty partitions: {np.flatnonzero(sizes == 0).tolist()}")
        labels.setflags(write=False)
        centroids.setflags(write=False)
        object.__setattr__(self, "assignments", labels)
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "method", PartitionMethod(self.method))

    @property
    def n_partitions(self) -> int:
        return self.centroids.shape[0]

    @property
    def sizes(self) -> List[int]:
        return np.bincount(self.assignments, minlength=self.n_partitions).tolist()

    def index_sets(self) -> List[np.ndarray]:
        """Sorted training indices of each partition; disjoint and exhaustive."""
        return [np.flatnonzero(self.assignments == i) for i in range(self.n_partitions)]


def partition_from_labels(X: np.ndarray, labels: np.ndarray,
                          method: PartitionMethod = PartitionMethod.RANDOM,
                          seed: int = 0) -> PartitionModel:
    """Build a partition from explicit labels, with centroids as label means."""
    labels = np.asarray(labels, dtype=int)
    return PartitionModel(labels, _centroids(X, labels, int(labels.max()) + 1), method, seed)


def _centroids(X: np.ndarray, labels: np.ndarray, M: int) -> np.ndarray:
    centroids = np.zeros((M, X.shape[1]))
    for i in range(M):
        members = X[labels == i]
        if len(members):
            centroids[i] = members.mean(axis=0)
    return centroids


def _wcss(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(np.sum((X - centroids[labels]) ** 2))


def _check_count(n: int, M: int) -> None:
    if M < 1:
        raise PartitionError(f"number of partitions must be at least 1, got {M}")
    if M > n:
        raise PartitionError(f"cannot split {n} training points into {M} partitions")


def _repair_empty(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Reseed each empty cluster with the point farthest from its own centroid."""
    M = centroids.shape[0]
    labels = labels.copy()
    for empty in np.flatnonzero(np.bincount(labels, minlength=M) == 0):
        sizes = np.bincount(labels, minlength=M)
        dist = np.sum((X - centroids[labels]) ** 2, axis=1)
        dist[sizes[labels] <= 1] = -np.inf  # never empty a donor cluster
        farthest = int(np.argmax(dist))
        logger.debug("Reseeding empty cluster %d with point %d", empty, farthest)
        labels[farthest] = empty
        centroids[empty] = X[farthest]
    return labels


def kmeans_partition(ds: Dataset, M: int, seed: int = 0,
                     max_iter: int = MAX_LLOYD_ITERATIONS) -> PartitionModel:
    """
    K-Means partitioning with k-means++ seeding and Lloyd iterations.

    Stops when assignments reach a fixed point or after max_iter iterations.
    Centroids of the result are the exact means of their members.

    Raises:
        PartitionError: M < 1 or M > n_train
    """
    X = ds.features
    _check_count(ds.n, M)

    centroids, _ = kmeans_plusplus(X, n_clusters=M, random_state=seed)
    centroids = np.array(centroids, dtype=float)
    labels = np.full(ds.n, -1)
    history: List[float] = []
    n_iter = 0

    for n_iter in range(1, max_iter + 1):
        new_labels = np.argmin(cdist(X, centroids, metric="sqeuclidean"), axis=1)
        if np.any(np.bincount(new_labels, minlength=M) == 0):
            new_labels = _repair_empty(X, new_labels, centroids)
        converged = np.array_equal(new_labels, labels)
        labels = new_labels
        centroids = _centroids(X, labels, M)
        history.append(_wcss(X, labels, centroids))
        if converged:
            break
    else:
        logger.warning("K-Means hit the iteration cap (%d) before convergence", max_iter)

    logger.info("K-Means: M=%d, %d iterations, WCSS=%.4f, sizes=%s",
                M, n_iter, history[-1], np.bincount(labels, minlength=M).tolist())
    return PartitionModel(labels, centroids, PartitionMethod.KMEANS, seed, n_iter, tuple(history))


def random_partition(ds: Dataset, M: int, seed: int = 0) -> PartitionModel:
    """
    Seeded shuffle into M blocks whose sizes differ by at most one.

    Raises:
        PartitionError: M < 1 or M > n_train
    """
    _check_count(ds.n, M)
    order = np.random.default_rng(seed).permutation(ds.n)
    labels = np.empty(ds.n, dtype=int)
    for i, block in enumerate(np.array_split(order, M)):
        labels[block] = i
    return PartitionModel(labels, _centroids(ds.features, labels, M), PartitionMethod.RANDOM, seed)


def make_partition(ds: Dataset, M: int, method: PartitionMethod, seed: int = 0) -> PartitionModel:
    if PartitionMethod(method) is PartitionMethod.KMEANS:
        return kmeans_partition(ds, M, seed)
    return random_partition(ds, M, seed)
