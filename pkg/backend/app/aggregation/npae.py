"""
Nested pointwise aggregation of experts (NPAE).

The experts' means mu_i(x*) = k_i^T C_i^{-1} y_i are jointly Gaussian with the
target. With v_i = C_i^{-1} k(X_i, x*):
    k_A[i]    = Cov(mu_i, y*)  = k_i^T v_i
    K_A[i, i] = Var(mu_i)      = k_i^T v_i
    K_A[i, j] = Cov(mu_i, mu_j) = v_i^T K(X_i, X_j) v_j   (i != j, disjoint data)
and the best linear unbiased predictor is k_A^T K_A^{-1} mu with error
variance k(x*, x*) + sigma^2 - k_A^T K_A^{-1} k_A.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, pinvh

from app.config import settings
from app.gp.expert import ExpertModel, SharedHyperparams
from app.gp.kernel import Kernel, SquaredExponentialARD

logger = logging.getLogger('dgpselect')

MIN_VARIANCE = 1e-12


@dataclass(frozen=True)
class NpaeJoint:
    """Covariances of the participating experts' means at one test point."""
    k_A: np.ndarray
    K_A: np.ndarray
    expert_ids: Tuple[int, ...]

    def __post_init__(self):
        m = len(self.expert_ids)
        if m < 1:
            raise ValueError("NPAE needs at least one expert")
        if self.k_A.shape != (m,) or self.K_A.shape != (m, m):
            raise ValueError(f"k_A/K_A shapes {self.k_A.shape}/{self.K_A.shape} do not match {m} experts")


def pair_covariance(kernel: Kernel, hyperparams: SharedHyperparams, expert_i: ExpertModel,
                    expert_j: ExpertModel, V_i: np.ndarray, V_j: np.ndarray) -> np.ndarray:
    """
    Cov(mu_i, mu_j) for every column of V_i / V_j (i != j).

    Observations held by both experts also share their noise; disjoint
    partitions have none.
    """
    K_ij = kernel.eval_matrix(hyperparams.kernel, expert_i.inputs, expert_j.inputs)
    values = np.sum(V_i * (K_ij @ V_j), axis=0)
    _, rows_i, rows_j = np.intersect1d(expert_i.point_indices, expert_j.point_indices,
                                       assume_unique=True, return_indices=True)
    if rows_i.size:
        values = values + hyperparams.noise_variance * np.sum(V_i[rows_i] * V_j[rows_j], axis=0)
    return values


def build_npae_joint(experts: Sequence[ExpertModel], hyperparams: SharedHyperparams,
                     x_star: np.ndarray, kernel: Optional[Kernel] = None) -> NpaeJoint:
    """
    Build k_A and K_A for one test point from the experts' cached factors.

    Raises:
        ValueError: no experts or dimension mismatch
    """
    kernel = kernel or SquaredExponentialARD()
    if not experts:
        raise ValueError("NPAE needs at least one expert")
    x_star = np.asarray(x_star, dtype=float).reshape(1, -1)
    if x_star.shape[1] != experts[0].inputs.shape[1]:
        raise ValueError(f"dimension mismatch: x* has {x_star.shape[1]} entries, experts {experts[0].inputs.shape[1]}")

    cross = [e.cross_covariance(kernel, hyperparams, x_star) for e in experts]
    weights = [e.solve(k) for e, k in zip(experts, cross)]
    m = len(experts)
    k_A = np.array([float(np.sum(k * v)) for k, v in zip(cross, weights)])
    K_A = np.diag(k_A)
    for i in range(m):
        for j in range(i + 1, m):
            K_A[i, j] = K_A[j, i] = pair_covariance(kernel, hyperparams, experts[i], experts[j],
                                                    weights[i], weights[j])[0]
    return NpaeJoint(k_A, K_A, tuple(e.expert_id for e in experts))


def solve_cross_covariance(K_A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Solve K_A X = B for the small expert covariance matrix.

    Cholesky is tried without jitter and then with relative jitter growing
    tenfold from npae_jitter_start to npae_jitter_max. A factor is accepted
    only if its smallest pivot is not dominated by the jitter or by round-off
    (rank tolerance); otherwise the pseudo-inverse with that rank tolerance is
    used.

    Returns:
        Tuple of (solution, True when the pseudo-inverse path was taken)
    """
    m = K_A.shape[0]
    rank_tol = settings.npae_rank_tol
    scale = float(np.mean(np.diag(K_A)))
    if scale > 0 and np.isfinite(scale):
        levels = [0.0]
        jitter = settings.npae_jitter_start
        while jitter <= settings.npae_jitter_max * (1 + 1e-9):
            levels.append(jitter)
            jitter *= 10.0
        for level in levels:
            try:
                L = cholesky(K_A + (level * scale) * np.eye(m), lower=True, check_finite=False)
            except LinAlgError:
                continue
            pivots = np.diag(L) ** 2
            if pivots.min() > max(rank_tol * pivots.max(), 10.0 * level * scale):
                return cho_solve((L, True), B, check_finite=False), False
    pinv = pinvh(K_A, atol=0.0, rtol=rank_tol)
    return pinv @ B, True


def _stacked_cholesky_accepts(K_A: np.ndarray) -> np.ndarray:
    """Points whose unjittered Cholesky factor passes the rank tolerance (n_t x k x k input)."""
    if K_A.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    try:
        L = np.linalg.cholesky(K_A)
    except np.linalg.LinAlgError:
        if K_A.shape[0] == 1:
            return np.zeros(1, dtype=bool)
        # bisect so one indefinite block does not reject the whole stack
        half = K_A.shape[0] // 2
        return np.concatenate((_stacked_cholesky_accepts(K_A[:half]), _stacked_cholesky_accepts(K_A[half:])))
    scale = np.mean(np.diagonal(K_A, axis1=-2, axis2=-1), axis=-1)
    pivots = np.diagonal(L, axis1=-2, axis2=-1) ** 2
    return (np.all(np.isfinite(pivots), axis=-1) & (scale > 0)
            & (pivots.min(axis=-1) > settings.npae_rank_tol * pivots.max(axis=-1)))


def npae_batch(k_A: np.ndarray, K_A: np.ndarray, local_means: np.ndarray,
               prior_var: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    BLUP means, error variances and pseudo-inverse flags for a stack of points.

    Args:
        k_A: n_t x k
        K_A: n_t x k x k
        local_means: n_t x k
        prior_var: n_t

    Points whose factorization is rejected fall back to the jitter ladder and
    pseudo-inverse of `solve_cross_covariance`, one at a time.
    """
    k_A = np.asarray(k_A, dtype=float)
    K_A = np.asarray(K_A, dtype=float)
    B = np.stack((k_A, np.asarray(local_means, dtype=float)), axis=-1)
    solution = np.empty_like(B)
    used_pinv = np.zeros(k_A.shape[0], dtype=bool)

    accepted = _stacked_cholesky_accepts(K_A)
    if accepted.any():
        solution[accepted] = np.linalg.solve(K_A[accepted], B[accepted])
    for t in np.flatnonzero(~accepted):
        solution[t], used_pinv[t] = solve_cross_covariance(K_A[t], B[t])

    mean = np.einsum("nk,nk->n", k_A, solution[..., 1])
    variance = np.maximum(np.asarray(prior_var, dtype=float) - np.einsum("nk,nk->n", k_A, solution[..., 0]),
                          MIN_VARIANCE)
    return mean, variance, used_pinv


def npae_point(k_A: np.ndarray, K_A: np.ndarray, local_means: np.ndarray,
               prior_var: float) -> Tuple[float, float, bool]:
    """BLUP mean, error variance and pseudo-inverse flag for one test point."""
    mean, variance, used_pinv = npae_batch(np.asarray(k_A, dtype=float)[None, :],
                                           np.asarray(K_A, dtype=float)[None, :, :],
                                           np.asarray(local_means, dtype=float)[None, :], [prior_var])
    return float(mean[0]), float(variance[0]), bool(used_pinv[0])


def npae_predict(joint: NpaeJoint, local_means: np.ndarray, hyperparams: SharedHyperparams,
                 x_star: np.ndarray, kernel: Optional[Kernel] = None) -> Tuple[float, float]:
    """
    Aggregate centered expert means at x* (zero prior mean, so no shift).

    Args:
        joint: k_A / K_A of the participating experts
        local_means: mu_i(x*) aligned with joint.expert_ids

    Returns:
        Tuple of (mean, variance); variance is clamped at 1e-12
    """
    kernel = kernel or SquaredExponentialARD()
    local_means = np.asarray(local_means, dtype=float).ravel()
    if local_means.shape != joint.k_A.shape:
        raise ValueError(f"{local_means.size} local means for {joint.k_A.size} experts")
    x_star = np.asarray(x_star, dtype=float).reshape(1, -1)
    prior_var = float(kernel.diag(hyperparams.kernel, x_star)[0]) + hyperparams.noise_variance
    mean, variance, used_pinv = npae_point(joint.k_A, joint.K_A, local_means, prior_var)
    if used_pinv:
        logger.debug("NPAE used the pseudo-inverse for experts %s", joint.expert_ids)
    return mean, variance
