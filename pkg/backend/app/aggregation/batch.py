"""
Batch aggregation over a test set, optionally restricted to selected experts.

Selection-independent work (local predictions, C_i^{-1} k(X_i, X*), k_A) is
done once per test set in `prepare`; each `aggregate_batch` call then builds
the K_A entries its selection needs and solves the per-point systems as one
stack (one stack per worker chunk).
"""
import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from app.aggregation.ci import ci_aggregate
from app.aggregation.npae import npae_batch, pair_covariance
from app.aggregation.prediction import AggregatedPrediction
from app.config import settings
from app.gp.expert import DistributedGP, LocalPrediction
from app.models import AggregationConfig, AggregationMethod
from app.parallel import parallel_map

logger = logging.getLogger('dgpselect')


@dataclass(frozen=True)
class PredictionCache:
    """Per-test-set quantities shared by every method and selection."""
    Xstar: np.ndarray
    local: Tuple[LocalPrediction, ...]
    local_means: np.ndarray   # M x n_t
    prior_var: np.ndarray     # n_t
    weights: Tuple[np.ndarray, ...]  # C_i^{-1} K(X_i, X*), n_i x n_t each
    k_A: np.ndarray           # M x n_t

    @property
    def n_test(self) -> int:
        return self.Xstar.shape[0]


def prepare(model: DistributedGP, Xstar: np.ndarray) -> PredictionCache:
    """Compute local predictions and NPAE building blocks for a test set."""
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    if Xstar.shape[0] and Xstar.shape[1] != model.train.d:
        raise ValueError(f"dimension mismatch: model has {model.train.d} inputs, X* has {Xstar.shape[1]}")
    local = tuple(model.predict_local(Xstar))

    def expert_blocks(expert):
        cross = expert.cross_covariance(model.kernel, model.hyperparams, Xstar)
        V = expert.solve(cross)
        return V, np.sum(cross * V, axis=0)

    blocks = parallel_map(expert_blocks, model.experts)
    M, n = model.n_experts, Xstar.shape[0]
    return PredictionCache(
        Xstar=Xstar,
        local=local,
        local_means=np.vstack([p.mean for p in local]) if n else np.empty((M, 0)),
        prior_var=model.prior_variance(Xstar) if n else np.empty(0),
        weights=tuple(b[0] for b in blocks),
        k_A=np.vstack([b[1] for b in blocks]) if n else np.empty((M, 0)),
    )


def _normalize_selection(selection: Optional[np.ndarray], n: int, M: int) -> np.ndarray:
    if selection is None:
        return np.tile(np.arange(M), (n, 1))
    ids = np.asarray(selection, dtype=int)
    if ids.ndim != 2 or ids.shape[0] != n:
        raise ValueError(f"selection must have one row per test point ({n}), got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= M):
        raise ValueError(f"selected expert ids must lie in 0..{M - 1}")
    ids = np.sort(ids, axis=1)
    repeated = np.any(ids[:, 1:] == ids[:, :-1], axis=1)
    if repeated.any():
        rows = np.flatnonzero(repeated)
        raise ValueError(f"selected expert ids must be distinct per point; duplicates in rows {rows[:5].tolist()}")
    return ids


def _npae_cross_tensor(model: DistributedGP, cache: PredictionCache, ids: np.ndarray) -> np.ndarray:
    """n_t x M x M tensor of K_A, filled only where both experts are selected."""
    M, n = model.n_experts, cache.n_test
    member = np.zeros((n, M), dtype=bool)
    member[np.arange(n)[:, None], ids] = True

    K_A = np.zeros((n, M, M))
    K_A[:, np.arange(M), np.arange(M)] = cache.k_A.T
    for i in range(M):
        for j in range(i + 1, M):
            cols = member[:, i] & member[:, j]
            if not cols.any():
                continue
            if cols.all():
                values = pair_covariance(model.kernel, model.hyperparams, model.experts[i],
                                         model.experts[j], cache.weights[i], cache.weights[j])
            else:
                values = pair_covariance(model.kernel, model.hyperparams, model.experts[i],
                                         model.experts[j], cache.weights[i][:, cols], cache.weights[j][:, cols])
            K_A[cols, i, j] = values
            K_A[cols, j, i] = values
    return K_A


def _npae_blocks(cache: PredictionCache, K_A: np.ndarray,
                 ids: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Selected k_A (n_t x k), K_A (n_t x k x k) and local means (n_t x k)."""
    rows = np.arange(cache.n_test)[:, None]
    return (cache.k_A.T[rows, ids],
            K_A[rows[:, :, None], ids[:, :, None], ids[:, None, :]],
            cache.local_means.T[rows, ids])


def aggregate_batch(model: DistributedGP, config: AggregationConfig, Xstar: Optional[np.ndarray] = None,
                    selection: Optional[np.ndarray] = None,
                    cache: Optional[PredictionCache] = None) -> AggregatedPrediction:
    """
    Aggregate expert predictions for every test point.

    Args:
        model: fitted DistributedGP
        config: aggregation method and beta rule
        Xstar: test inputs (ignored when a cache is given)
        selection: optional n_t x K matrix of expert ids per point; None uses all experts
        cache: precomputed `prepare(model, Xstar)` output to reuse across calls

    Returns:
        AggregatedPrediction with wall time, experts used per point and, for
        NPAE, the solve time, pseudo-inverse points and sum of K^3
    """
    start = time.perf_counter()
    method = AggregationMethod(config.method)
    if cache is None:
        if Xstar is None:
            raise ValueError("either Xstar or cache is required")
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
        if Xstar.shape[0] == 0:
            return AggregatedPrediction.empty(method)
        cache = prepare(model, Xstar)
    n, M = cache.n_test, model.n_experts
    if n == 0:
        return AggregatedPrediction.empty(method)

    ids = _normalize_selection(selection, n, M)

    if method.is_ci:
        active = np.zeros((M, n), dtype=bool)
        active[ids.T, np.arange(n)[None, :]] = True
        result = ci_aggregate(config, cache.local, cache.prior_var, active)
        return AggregatedPrediction(
            mean=result.mean, variance=result.variance, method=method,
            wall_time=time.perf_counter() - start, experts_used=result.experts_used,
            bcm_fallback_points=result.bcm_fallback_points,
        )

    k_sel, K_sel, mu_sel = _npae_blocks(cache, _npae_cross_tensor(model, cache, ids), ids)
    solve_start = time.perf_counter()
    chunks = [c for c in np.array_split(np.arange(n), max(1, min(n, settings.n_workers))) if c.size]
    results = parallel_map(lambda c: npae_batch(k_sel[c], K_sel[c], mu_sel[c], cache.prior_var[c]), chunks)
    solve_time = time.perf_counter() - solve_start

    mean = np.concatenate([r[0] for r in results])
    variance = np.concatenate([r[1] for r in results])
    pinv_points = np.flatnonzero(np.concatenate([r[2] for r in results]))
    if pinv_points.size:
        logger.info("NPAE: %d of %d points solved with the pseudo-inverse", pinv_points.size, n)
    k = ids.shape[1]
    return AggregatedPrediction(
        mean=mean, variance=variance, method=method,
        wall_time=time.perf_counter() - start,
        experts_used=np.full(n, k, dtype=int),
        pinv_points=pinv_points,
        solve_time=solve_time,
        cubic_cost=int(n * k ** 3),
    )
