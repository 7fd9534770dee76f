"""
Exception hierarchy for the distributed GP toolkit.
"""


class DGPError(Exception):
    """Base class for all errors raised by this package."""


class DatasetError(DGPError, ValueError):
    """Input data could not be loaded, standardized or split."""


class PartitionError(DGPError, ValueError):
    """Training data cannot be divided into the requested partitions."""


class FactorizationError(DGPError, ArithmeticError):
    """Cholesky factorization failed even after maximal jitter."""


class TrainingError(DGPError, RuntimeError):
    """Hyperparameter optimization produced no finite objective value."""


class ClassifierError(DGPError, RuntimeError):
    """Classifier used before training or trained on invalid labels."""


class ClassifierDivergenceError(ClassifierError):
    """Classifier loss became non-finite."""


class SelectionError(DGPError, ValueError):
    """Expert selection received invalid input."""


class MetricError(DGPError, ValueError):
    """Metric inputs violate the metric's preconditions."""


class BenchmarkStageError(DGPError, RuntimeError):
    """A benchmark stage failed; `stage` names the pipeline step."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage={stage}: {type(cause).__name__}: {cause}")
