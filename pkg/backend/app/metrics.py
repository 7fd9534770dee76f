"""
Prediction quality: standardized mean squared error and mean standardized log loss.
"""
import numpy as np

from app.aggregation.prediction import AggregatedPrediction
from app.data.dataset import Dataset
from app.exceptions import MetricError
from app.models import MetricReport

LOG_2PI = float(np.log(2.0 * np.pi))
MIN_VARIANCE = 1e-300


def _vectors(*arrays) -> list:
    vectors = [np.asarray(a, dtype=float).ravel() for a in arrays]
    if len({v.size for v in vectors}) != 1:
        raise MetricError(f"length mismatch: {[v.size for v in vectors]}")
    return vectors


def smse(pred_mean: np.ndarray, y_test: np.ndarray) -> float:
    """Mean squared error divided by the population variance of y_test."""
    mu, y = _vectors(pred_mean, y_test)
    if y.size < 2:
        raise MetricError("SMSE needs at least two test points")
    variance = float(np.var(y))
    if variance <= 0:
        raise MetricError("SMSE is undefined for constant test targets")
    return float(np.mean((y - mu) ** 2) / variance)


def _gaussian_loss(y: np.ndarray, mean, variance) -> np.ndarray:
    return 0.5 * (LOG_2PI + np.log(variance)) + (y - mean) ** 2 / (2.0 * variance)


def msll(pred_mean: np.ndarray, pred_var: np.ndarray, y_test: np.ndarray,
         train_mean: float, train_var: float) -> float:
    """
    Mean negative log predictive density minus that of N(train_mean, train_var).

    Negative values beat the trivial predictor.
    """
    mu, var, y = _vectors(pred_mean, pred_var, y_test)
    if y.size == 0:
        raise MetricError("MSLL needs at least one test point")
    if np.any(~(var > 0)) or not train_var > 0:
        raise MetricError("MSLL needs strictly positive predictive and training variances")
    if np.any(var < MIN_VARIANCE):
        raise MetricError(f"predictive variance below {MIN_VARIANCE:g}")
    return float(np.mean(_gaussian_loss(y, mu, var) - _gaussian_loss(y, train_mean, train_var)))


def rmse(pred_mean: np.ndarray, y_test: np.ndarray) -> float:
    mu, y = _vectors(pred_mean, y_test)
    if y.size == 0:
        raise MetricError("RMSE needs at least one test point")
    return float(np.sqrt(np.mean((y - mu) ** 2)))


def evaluate(prediction: AggregatedPrediction, test: Dataset, train: Dataset,
             k: int = None) -> MetricReport:
    """
    SMSE and MSLL in standardized target space plus RMSE on the original scale.

    `test` and `train` must share the training standardization, so the
    trivial model of MSLL is N(0, var(train targets)).
    """
    y = test.targets
    train_var = float(np.var(train.targets))
    return MetricReport(
        smse=smse(prediction.mean, y),
        msll=msll(prediction.mean, prediction.variance, y, float(np.mean(train.targets)), train_var),
        rmse=rmse(test.destandardize_targets(prediction.mean), test.raw_targets()),
        n_test=y.size,
        method=prediction.method.value,
        k=k,
        wall_time=prediction.wall_time,
    )
