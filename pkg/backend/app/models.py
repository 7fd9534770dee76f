"""
Pydantic models for run configuration, training configuration and reports.
"""
from enum import Enum
from pathlib import Path
from typing import ClassVar, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator


class PartitionMethod(str, Enum):
    KMEANS = "kmeans"
    RANDOM = "random"


class AggregationMethod(str, Enum):
    POE = "poe"
    GPOE = "gpoe"
    BCM = "bcm"
    RBCM = "rbcm"
    NPAE = "npae"

    @property
    def is_ci(self) -> bool:
        return self is not AggregationMethod.NPAE


class BetaRule(str, Enum):
    UNIFORM = "uniform"
    DIFF_ENTROPY = "diff_entropy"


class SelectorKind(str, Enum):
    NONE = "none"
    KNN = "knn"
    DNN = "dnn"
    STATIC_GRAPH = "static"


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"


class SplitSpec(BaseModel):
    """Train/test split parameters."""
    train_fraction: float = Field(default=0.9, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)


class OptimizerConfig(BaseModel):
    """Adaptive-moment descent on log-hyperparameters."""
    iterations: int = Field(default=500, ge=0)
    learning_rate: float = Field(default=0.05, gt=0.0)
    restarts: int = Field(default=2, ge=1)
    restart_scale: float = Field(default=0.5, ge=0.0, description="Std of log-space perturbation for restarts after the first")
    log_bound: float = Field(default=12.0, gt=0.0, description="Log-parameters are clipped to [-log_bound, log_bound]")
    seed: int = Field(default=0, ge=0)


class TrainConfig(BaseModel):
    """Classifier training configuration."""
    epochs: int = Field(default=300, ge=1)
    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    seed: int = Field(default=0, ge=0)
    validation_fraction: float = Field(default=0.1, ge=0.0, le=0.5)
    hidden_layers: Tuple[int, ...] = (64, 64)
    activation: Activation = Activation.RELU
    max_backoffs: int = Field(default=2, ge=0, description="Learning-rate halvings tried after divergence")

    @field_validator("hidden_layers")
    @classmethod
    def validate_hidden(cls, v):
        if any(size < 1 for size in v):
            raise ValueError("hidden layer sizes must be positive")
        return tuple(v)


class AggregationConfig(BaseModel):
    """Aggregation method and the beta weighting rule for gPoE."""
    method: AggregationMethod = AggregationMethod.NPAE
    beta_rule: BetaRule = BetaRule.DIFF_ENTROPY


class SyntheticSpec(BaseModel):
    """Synthetic GP-prior dataset used instead of a CSV file."""
    n: int = Field(..., ge=2)
    d: int = Field(default=2, ge=1)
    signal_variance: float = Field(default=1.0, gt=0.0)
    lengthscale: float = Field(default=1.0, gt=0.0)
    noise_variance: float = Field(default=0.01, gt=0.0)
    seed: int = Field(default=0, ge=0)


class MetricReport(BaseModel):
    """Prediction quality for one aggregation run."""
    smse: float = Field(..., ge=0.0)
    msll: float
    rmse: float = Field(..., ge=0.0, description="Root mean squared error on the original target scale")
    n_test: int = Field(..., ge=1)
    method: str
    k: Optional[int] = None
    wall_time: float = Field(..., ge=0.0)


class RunConfig(BaseModel):
    """Benchmark run configuration (CLI flags or a JSON config file)."""
    data_path: Optional[Path] = None
    target_column: Optional[Union[int, str]] = None
    synthetic: Optional[SyntheticSpec] = None
    train_fraction: float = Field(default=0.9, gt=0.0, lt=1.0)
    partitions: int = Field(default=10, ge=1)
    partition_method: PartitionMethod = PartitionMethod.KMEANS
    methods: List[AggregationMethod] = Field(
        default_factory=lambda: [AggregationMethod.POE, AggregationMethod.GPOE,
                                 AggregationMethod.BCM, AggregationMethod.NPAE]
    )
    beta_rule: BetaRule = BetaRule.DIFF_ENTROPY
    selectors: List[SelectorKind] = Field(
        default_factory=lambda: [SelectorKind.STATIC_GRAPH, SelectorKind.KNN, SelectorKind.DNN]
    )
    k_values: List[int] = Field(default_factory=lambda: list(range(1, 11)))
    seeds: List[int] = Field(default_factory=lambda: [0])
    output_path: Path = Path("report.json")
    checkpoint_dir: Optional[Path] = None
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    classifier: TrainConfig = Field(default_factory=TrainConfig)
    static_ridge: Optional[float] = Field(default=None, gt=0.0, description="Defaults to 1e-3 * trace(S) / M")

    @field_validator("k_values")
    @classmethod
    def validate_k_values(cls, v):
        if any(k < 1 for k in v):
            raise ValueError("K values must be at least 1")
        return sorted(set(v))

    @field_validator("seeds")
    @classmethod
    def validate_seeds(cls, v):
        if not v:
            raise ValueError("at least one seed is required")
        if any(s < 0 for s in v):
            raise ValueError("seeds must be non-negative")
        return list(dict.fromkeys(v))

    @field_validator("methods")
    @classmethod
    def validate_methods(cls, v):
        if not v:
            raise ValueError("at least one aggregation method is required")
        return list(dict.fromkeys(v))

    @field_validator("selectors")
    @classmethod
    def dedupe_selectors(cls, v):
        # empty runs only the unselected baseline
        return list(dict.fromkeys(v))

    @model_validator(mode="after")
    def validate_consistency(self) -> "RunConfig":
        if self.data_path is None and self.synthetic is None:
            raise ValueError("either data_path or synthetic must be given")
        if self.selection_kinds and any(k > self.partitions for k in self.k_values):
            raise ValueError(f"K values must not exceed the number of partitions ({self.partitions})")
        return self

    @property
    def selection_kinds(self) -> List[SelectorKind]:
        """Configured selectors without the full-set baseline, which always runs."""
        return [s for s in self.selectors if s is not SelectorKind.NONE]


class MetricRow(BaseModel):
    """One (method, selector, K, seed) result."""
    method: AggregationMethod
    selector: SelectorKind
    k: Optional[int] = None
    seed: int
    smse: float
    msll: float
    rmse: float
    n_test: int
    experts_used_mean: float
    pinv_fallbacks: int = 0
    bcm_fallbacks: int = 0
    wall_time: float = Field(..., ge=0.0)
    solve_time: float = Field(default=0.0, ge=0.0)

    # Columns written to the CSV (timings excluded so reruns are byte-identical)
    CSV_COLUMNS: ClassVar[Tuple[str, ...]] = (
        "method", "selector", "k", "seed", "smse", "msll", "rmse",
        "n_test", "experts_used_mean", "pinv_fallbacks", "bcm_fallbacks",
    )


class SeedSummary(BaseModel):
    """Per-seed fitted state reported alongside the metric rows."""
    seed: int
    n_train: int
    n_test: int
    partition_sizes: List[int]
    log_hyperparameters: Dict[str, Union[float, List[float]]]
    final_nlml: float
    classifier_accuracy: Optional[float] = None
    static_set: Optional[List[int]] = None


class RunReport(BaseModel):
    """Full benchmark report."""
    status: Literal["ok", "failed"] = "ok"
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    config: RunConfig
    environment: Dict[str, str] = Field(default_factory=dict)
    decisions: Dict[str, str] = Field(default_factory=dict)
    seeds: List[SeedSummary] = Field(default_factory=list)
    rows: List[MetricRow] = Field(default_factory=list)

    @property
    def fallback_totals(self) -> Dict[str, int]:
        return {
            "pinv": sum(r.pinv_fallbacks for r in self.rows),
            "bcm": sum(r.bcm_fallbacks for r in self.rows),
        }
