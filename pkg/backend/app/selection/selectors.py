"""
Expert selection: K experts per test point (KNN over partition centroids,
softmax classifier) or one fixed set for all points (precision-graph degree).

Labels are 0-based expert ids. Ties always go to the lower expert id.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from app.exceptions import ClassifierError, SelectionError
from app.gp.expert import DistributedGP
from app.models import SelectorKind
from app.selection.classifier import ClassifierModel, forward_batch

logger = logging.getLogger('dgpselect')

IMPORTANCE_DECIMALS = 10


@dataclass(frozen=True)
class SelectionResult:
    """Selected expert ids and their scores (distances ascending, probabilities descending)."""
    expert_ids: np.ndarray
    scores: np.ndarray

    @property
    def k(self) -> int:
        return self.expert_ids.size


@dataclass(frozen=True)
class SelectorModel:
    kind: SelectorKind
    k: int
    n_experts: int
    centroids: Optional[np.ndarray] = None
    classifier: Optional[ClassifierModel] = None
    static_set: Optional[Tuple[int, ...]] = None
    importance: Optional[np.ndarray] = None

    def __post_init__(self):
        kind = SelectorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.n_experts < 1:
            raise SelectionError("a selector needs at least one expert")
        if not 1 <= self.k <= self.n_experts:
            raise SelectionError(f"K must lie in 1..{self.n_experts}, got {self.k}")
        if kind is SelectorKind.KNN:
            if self.centroids is None or np.atleast_2d(self.centroids).shape[0] != self.n_experts:
                raise SelectionError("KNN selection needs one centroid per expert")
            object.__setattr__(self, "centroids", np.atleast_2d(np.asarray(self.centroids, dtype=float)))
        if kind is SelectorKind.DNN and self.classifier is not None and self.classifier.n_classes != self.n_experts:
            raise SelectionError(f"classifier has {self.classifier.n_classes} outputs for {self.n_experts} experts")
        if kind is SelectorKind.STATIC_GRAPH:
            ids = tuple(int(i) for i in (self.static_set or ()))
            if len(ids) != self.k or len(set(ids)) != self.k:
                raise SelectionError(f"static set must hold {self.k} distinct experts, got {ids}")
            if min(ids) < 0 or max(ids) >= self.n_experts:
                raise SelectionError(f"static set ids must lie in 0..{self.n_experts - 1}")
            object.__setattr__(self, "static_set", ids)

    @classmethod
    def knn(cls, centroids: np.ndarray, k: int) -> "SelectorModel":
        centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
        return cls(SelectorKind.KNN, k, centroids.shape[0], centroids=centroids)

    @classmethod
    def dnn(cls, classifier: ClassifierModel, k: int) -> "SelectorModel":
        return cls(SelectorKind.DNN, k, classifier.n_classes, classifier=classifier)

    @classmethod
    def full(cls, n_experts: int) -> "SelectorModel":
        """All experts for every point; the unselected baseline."""
        return cls(SelectorKind.NONE, n_experts, n_experts)


def _check_dim(X: np.ndarray, d: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != d:
        raise SelectionError(f"dimension mismatch: selector expects {d} inputs, got {X.shape[1]}")
    return X


def _top_k(scores: np.ndarray, k: int, ascending: bool) -> Tuple[np.ndarray, np.ndarray]:
    keys = scores if ascending else -scores
    order = np.argsort(keys, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(scores, order, axis=1)


def knn_batch(model: SelectorModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = _check_dim(X, model.centroids.shape[1])
    return _top_k(cdist(X, model.centroids), model.k, ascending=True)


def dnn_batch(model: SelectorModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if model.classifier is None:
        raise ClassifierError("DNN selection needs a trained classifier")
    X = _check_dim(X, model.classifier.input_dim)
    return _top_k(forward_batch(model.classifier, X), model.k, ascending=False)


def select_knn(model: SelectorModel, x_star: np.ndarray) -> SelectionResult:
    """K experts whose partition centroids are closest to x* (Euclidean)."""
    if model.kind is not SelectorKind.KNN:
        raise SelectionError(f"select_knn called on a {model.kind.value} selector")
    ids, scores = knn_batch(model, np.asarray(x_star, dtype=float).reshape(1, -1))
    return SelectionResult(ids[0], scores[0])


def select_dnn(model: SelectorModel, x_star: np.ndarray) -> SelectionResult:
    """K experts with the highest classifier probabilities at x*."""
    if model.kind is not SelectorKind.DNN:
        raise SelectionError(f"select_dnn called on a {model.kind.value} selector")
    ids, scores = dnn_batch(model, np.asarray(x_star, dtype=float).reshape(1, -1))
    return SelectionResult(ids[0], scores[0])


def precision_degree_ranking(S: np.ndarray, k: int, ridge: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rank experts by their weighted degree in the precision graph of S.

    importance_i = sum_{j != i} |(S + ridge I)^{-1}_ij|, normalized to sum 1.
    ridge defaults to 1e-3 * trace(S) / M.

    Returns:
        Tuple of (top-k expert ids, importance of every expert)
    """
    S = np.asarray(S, dtype=float)
    M = S.shape[0]
    if S.shape != (M, M):
        raise SelectionError(f"covariance must be square, got {S.shape}")
    if not 1 <= k <= M:
        raise SelectionError(f"K must lie in 1..{M}, got {k}")
    if ridge is None:
        ridge = 1e-3 * float(np.trace(S)) / M
    ridge = max(float(ridge), 1e-12)

    precision = np.linalg.inv(S + ridge * np.eye(M))
    off_diagonal = np.abs(precision)
    np.fill_diagonal(off_diagonal, 0.0)
    importance = off_diagonal.sum(axis=1)
    total = importance.sum()
    if total > 0:
        importance = importance / total
    importance = np.round(importance, IMPORTANCE_DECIMALS)
    return np.argsort(-importance, kind="stable")[:k], importance


def fit_static_graph(model: DistributedGP, k: int, calibration_X: Optional[np.ndarray] = None,
                     ridge: Optional[float] = None) -> SelectorModel:
    """
    Fixed expert set from the covariance of the experts' predictions.

    The experts' predictive means over the calibration inputs (default: the
    training inputs) give an M x M covariance S of centered prediction
    vectors; the k experts most connected in the ridge-regularized precision
    graph are selected.

    Raises:
        SelectionError: fewer than two calibration points or invalid K
    """
    X = model.train.features if calibration_X is None else _check_dim(calibration_X, model.train.d)
    if X.shape[0] < 2:
        raise SelectionError(f"static selection needs at least 2 calibration points, got {X.shape[0]}")
    predictions = np.vstack([p.mean for p in model.predict_local(X)])
    centered = predictions - predictions.mean(axis=1, keepdims=True)
    S = centered @ centered.T / X.shape[0]
    ids, importance = precision_degree_ranking(S, k, ridge)
    logger.debug("Static expert set for K=%d: %s", k, ids.tolist())
    return SelectorModel(SelectorKind.STATIC_GRAPH, k, model.n_experts,
                         static_set=tuple(int(i) for i in ids), importance=importance)


def select_batch(model: SelectorModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Selected ids and scores for every row of X (n x K each)."""
    if model.kind is SelectorKind.KNN:
        return knn_batch(model, X)
    if model.kind is SelectorKind.DNN:
        return dnn_batch(model, X)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if model.kind is SelectorKind.STATIC_GRAPH:
        ids = np.array(model.static_set, dtype=int)
        scores = model.importance[ids] if model.importance is not None else np.zeros(model.k)
    else:
        ids, scores = np.arange(model.n_experts), np.zeros(model.n_experts)
    return np.tile(ids, (n, 1)), np.tile(scores, (n, 1))


def select(model: SelectorModel, x_star: np.ndarray) -> SelectionResult:
    """Dispatch on the selector kind; static and full selectors ignore x*."""
    if model.kind is SelectorKind.KNN:
        return select_knn(model, x_star)
    if model.kind is SelectorKind.DNN:
        return select_dnn(model, x_star)
    ids, scores = select_batch(model, np.zeros((1, 1)))
    return SelectionResult(ids[0], scores[0])
