"""
Cholesky factorization with jitter escalation.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky

from app.config import settings
from app.exceptions import FactorizationError

logger = logging.getLogger('dgpselect')


def jittered_cholesky(K: np.ndarray, jitter_start: Optional[float] = None,
                      jitter_max: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of a symmetric PSD matrix.

    Tries the plain matrix first, then adds jitter * trace/n to the diagonal,
    growing tenfold from jitter_start up to jitter_max.

    Returns:
        Tuple of (lower factor, absolute jitter added)

    Raises:
        FactorizationError: still not positive definite at jitter_max
    """
    jitter_start = settings.cholesky_jitter_start if jitter_start is None else jitter_start
    jitter_max = settings.cholesky_jitter_max if jitter_max is None else jitter_max

    K = np.asarray(K, dtype=float)
    if not np.all(np.isfinite(K)):
        raise FactorizationError("matrix contains non-finite entries")
    try:
        return cholesky(K, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass

    n = K.shape[0]
    scale = max(float(np.trace(K)) / n, np.finfo(float).tiny)
    relative = jitter_start
    while relative <= jitter_max * (1 + 1e-9):
        jitter = relative * scale
        try:
            L = cholesky(K + jitter * np.eye(n), lower=True, check_finite=False)
            logger.warning("Cholesky needed jitter %.3g (relative %.0e) on %dx%d matrix",
                           jitter, relative, n, n)
            return L, jitter
        except LinAlgError:
            relative *= 10.0
    raise FactorizationError(f"matrix of size {n} not positive definite with jitter up to {jitter_max:g}*trace/n")


def chol_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve (L L^T) X = B given the lower factor L."""
    return cho_solve((L, True), B, check_finite=False)


def log_det_from_cholesky(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))
