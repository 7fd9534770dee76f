"""
Conditional-independence aggregation: weighted products of expert Gaussians.

All methods fuse precisions per test point,
    precision = sum_i beta_i / var_i  (+ (1 - sum_i beta_i) / prior_var for BCM/rBCM)
    mean      = sum_i beta_i mean_i / var_i / precision
and differ only in the weights beta and the prior correction.
"""
import logging
import time
from typing import Optional, Sequence, Union

import numpy as np

from app.aggregation.prediction import AggregatedPrediction
from app.gp.expert import LocalPrediction
from app.models import AggregationConfig, AggregationMethod, BetaRule

logger = logging.getLogger('dgpselect')


def entropy_gain(variances: np.ndarray, prior_var: np.ndarray) -> np.ndarray:
    """Differential-entropy difference 0.5 * (log prior_var - log var_i), floored at 0."""
    return np.maximum(0.5 * (np.log(prior_var)[None, :] - np.log(variances)), 0.0)


def beta_weights(config: AggregationConfig, variances: np.ndarray, prior_var: np.ndarray,
                 active: np.ndarray) -> np.ndarray:
    """
    Per-point expert weights (M x n_t); zero for experts not in the active set.
    """
    method = AggregationMethod(config.method)
    active_f = active.astype(float)
    n_active = active_f.sum(axis=0)

    if method in (AggregationMethod.POE, AggregationMethod.BCM):
        return active_f
    if method is AggregationMethod.RBCM:
        return entropy_gain(variances, prior_var) * active_f
    if method is AggregationMethod.GPOE:
        uniform = active_f / n_active
        if BetaRule(config.beta_rule) is BetaRule.UNIFORM:
            return uniform
        gain = entropy_gain(variances, prior_var) * active_f
        total = gain.sum(axis=0)
        # Points where no expert gains information fall back to uniform weights
        safe_total = np.where(total > 0, total, 1.0)
        return np.where(total > 0, gain / safe_total, uniform)
    raise ValueError(f"{method.value} is not a conditional-independence method")


def ci_aggregate(config: AggregationConfig, locals_: Sequence[LocalPrediction],
                 prior_var: Union[float, np.ndarray], active: Optional[np.ndarray] = None) -> AggregatedPrediction:
    """
    Fuse local predictions under conditional independence.

    Args:
        config: method (poe, gpoe, bcm, rbcm) and gPoE beta rule
        locals_: one LocalPrediction per expert
        prior_var: prior predictive variance k(x*,x*) + sigma^2, scalar or per point
        active: optional M x n_t boolean mask of experts taking part at each point

    Returns:
        AggregatedPrediction; BCM/rBCM points with non-positive precision fall
        back to PoE and are listed in bcm_fallback_points
    """
    start = time.perf_counter()
    method = AggregationMethod(config.method)
    if not locals_:
        raise ValueError("at least one expert prediction is required")
    means = np.vstack([p.mean for p in locals_])
    variances = np.vstack([p.variance for p in locals_])
    M, n = means.shape
    if n == 0:
        return AggregatedPrediction.empty(method)

    prior = np.broadcast_to(np.asarray(prior_var, dtype=float), (n,)).astype(float)
    active = np.ones((M, n), dtype=bool) if active is None else np.asarray(active, dtype=bool)
    if active.shape != (M, n):
        raise ValueError(f"active mask must have shape {(M, n)}, got {active.shape}")
    if np.any(active.sum(axis=0) == 0):
        raise ValueError("every test point needs at least one active expert")

    precisions = 1.0 / variances
    beta = beta_weights(config, variances, prior, active)
    precision = np.sum(beta * precisions, axis=0)
    if method in (AggregationMethod.BCM, AggregationMethod.RBCM):
        precision = precision + (1.0 - beta.sum(axis=0)) / prior

    fallback = np.flatnonzero(~(precision > 0))
    if fallback.size:
        logger.debug("%s: %d points with non-positive precision fall back to PoE", method.value, fallback.size)
        beta[:, fallback] = active[:, fallback]
        precision[fallback] = np.sum(beta[:, fallback] * precisions[:, fallback], axis=0)

    mean = np.sum(beta * precisions * means, axis=0) / precision
    return AggregatedPrediction(
        mean=mean,
        variance=1.0 / precision,
        method=method,
        wall_time=time.perf_counter() - start,
        experts_used=active.sum(axis=0).astype(int),
        bcm_fallback_points=fallback,
    )
