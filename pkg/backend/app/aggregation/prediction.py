"""
Aggregated prediction container.
"""
from dataclasses import dataclass, field

import numpy as np

from app.models import AggregationMethod


@dataclass(frozen=True)
class AggregatedPrediction:
    """Fused predictive mean/variance per test point plus bookkeeping."""
    mean: np.ndarray
    variance: np.ndarray
    method: AggregationMethod
    wall_time: float
    experts_used: np.ndarray
    pinv_points: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    bcm_fallback_points: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    solve_time: float = 0.0
    cubic_cost: int = 0

    @property
    def n_test(self) -> int:
        return self.mean.size

    @classmethod
    def empty(cls, method: AggregationMethod) -> "AggregatedPrediction":
        return cls(np.empty(0), np.empty(0), AggregationMethod(method), 0.0, np.empty(0, dtype=int))
