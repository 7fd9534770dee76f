"""
Regression datasets: CSV ingestion, z-score standardization and seeded train/test splits.

Datasets keep their standardization parameters so raw values stay recoverable.
Splits re-standardize with statistics computed from the training rows only.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from app.exceptions import DatasetError
from app.models import SplitSpec

logger = logging.getLogger('dgpselect')

# Columns whose std falls below this are treated as constant (divisor 1)
CONSTANT_STD_TOL = 1e-12


def _column_stats(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population std, with constant columns mapped to std 1."""
    means = values.mean(axis=0)
    stds = values.std(axis=0)
    stds = np.where(stds < CONSTANT_STD_TOL, 1.0, stds)
    return means, stds


@dataclass(frozen=True)
class Dataset:
    """Standardized regression data plus the parameters that produced it."""
    features: np.ndarray
    targets: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    target_mean: float
    target_std: float
    source_name: str = "array"
    feature_names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.array(self.targets, dtype=float).ravel()
        if X.ndim != 2:
            raise DatasetError(f"features must be a 2-D matrix, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DatasetError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
        if X.shape[1] < 1:
            raise DatasetError("at least one feature column is required")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DatasetError("dataset contains non-finite values")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "feature_means", np.asarray(self.feature_means, dtype=float))
        object.__setattr__(self, "feature_stds", np.asarray(self.feature_stds, dtype=float))
        X.setflags(write=False)
        y.setflags(write=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_raw(cls, raw_features: np.ndarray, raw_targets: np.ndarray,
                 source_name: str = "array", feature_names: Tuple[str, ...] = (),
                 standardize: bool = True) -> "Dataset":
        """
        Build a dataset from raw values.

        Args:
            raw_features: n x d matrix
            raw_targets: length-n vector
            source_name: label stored in reports
            feature_names: optional column names
            standardize: when False the data is used as-is (means 0, stds 1)

        Raises:
            DatasetError: fewer than 2 rows, non-finite values or a constant target
        """
        X = np.asarray(raw_features, dtype=float)
        y = np.asarray(raw_targets, dtype=float).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] < 2:
            raise DatasetError(f"need at least 2 rows, got {X.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DatasetError("dataset contains non-finite values")
        if not standardize:
            return cls(X, y, np.zeros(X.shape[1]), np.ones(X.shape[1]), 0.0, 1.0,
                       source_name, tuple(feature_names))

        target_std = float(y.std())
        if target_std < CONSTANT_STD_TOL:
            raise DatasetError("target column is constant (std = 0)")
        means, stds = _column_stats(X)
        target_mean = float(y.mean())
        return cls(
            features=(X - means) / stds,
            targets=(y - target_mean) / target_std,
            feature_means=means,
            feature_stds=stds,
            target_mean=target_mean,
            target_std=target_std,
            source_name=source_name,
            feature_names=tuple(feature_names),
        )

    def raw_features(self) -> np.ndarray:
        return self.features * self.feature_stds + self.feature_means

    def raw_targets(self) -> np.ndarray:
        return self.destandardize_targets(self.targets)

    def standardize_features(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.feature_means) / self.feature_stds

    def standardize_targets(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.target_mean) / self.target_std

    def destandardize_targets(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.target_std + self.target_mean

    def rows(self, indices: np.ndarray) -> "Dataset":
        """Subset of rows sharing this dataset's standardization parameters."""
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.features[idx], self.targets[idx], self.feature_means,
                       self.feature_stds, self.target_mean, self.target_std,
                       self.source_name, self.feature_names)


def load_csv(path: Union[str, Path], target_column: Optional[Union[int, str]] = None) -> Dataset:
    """
    Load a numeric CSV file with one header row.

    Args:
        path: CSV file path (UTF-8, comma-separated)
        target_column: column name or 0-based index; defaults to the last column

    Returns:
        Standardized Dataset

    Raises:
        DatasetError: missing file, ragged rows, non-numeric cells, too few rows,
            missing target column or constant target
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"data file not found: {path}")

    try:
        frame = pd.read_csv(path, encoding="utf-8", skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise DatasetError(f"ragged rows in {path.name}: {e}") from e
    except (pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetError(f"could not read {path.name}: {e}") from e

    if frame.shape[1] < 2:
        raise DatasetError("need at least one feature column and one target column")
    if len(frame) < 2:
        raise DatasetError(f"need at least 2 data rows, got {len(frame)}")
    if frame.isna().any().any():
        # Short rows are padded with NaN by the parser
        bad_row = int(np.flatnonzero(frame.isna().any(axis=1).to_numpy())[0])
        raise DatasetError(f"ragged or empty cells in data row {bad_row + 1}")

    target_name = _resolve_target(frame, target_column)
    try:
        numeric = frame.apply(lambda column: pd.to_numeric(column, errors="raise"))
    except (ValueError, TypeError) as e:
        raise DatasetError(f"non-numeric cell in {path.name}: {e}") from e

    feature_frame = numeric.drop(columns=[target_name])
    dataset = Dataset.from_raw(
        feature_frame.to_numpy(dtype=float),
        numeric[target_name].to_numpy(dtype=float),
        source_name=path.name,
        feature_names=tuple(str(c) for c in feature_frame.columns),
    )
    logger.info("Loaded %s: n=%d, d=%d, target=%s", path.name, dataset.n, dataset.d, target_name)
    return dataset


def _resolve_target(frame: pd.DataFrame, target_column: Optional[Union[int, str]]) -> str:
    if target_column is None:
        return frame.columns[-1]
    if isinstance(target_column, int) or (isinstance(target_column, str) and target_column.lstrip("-").isdigit()
                                          and target_column not in frame.columns):
        index = int(target_column)
        if not -frame.shape[1] <= index < frame.shape[1]:
            raise DatasetError(f"target column index {index} out of range")
        return frame.columns[index]
    if target_column not in frame.columns:
        raise DatasetError(f"target column '{target_column}' not present")
    return target_column


def split(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    """
    Seeded shuffle split into train and test views.

    Both views are standardized with the TRAINING rows' statistics; test rows
    never contribute to the parameters.

    Raises:
        DatasetError: either side would be empty
    """
    n_train = int(np.floor(spec.train_fraction * ds.n + 0.5))
    if n_train < 1 or n_train >= ds.n:
        raise DatasetError(
            f"train fraction {spec.train_fraction} leaves an empty side (n={ds.n}, n_train={n_train})"
        )

    order = np.random.default_rng(spec.seed).permutation(ds.n)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])

    raw_X = ds.raw_features()
    raw_y = ds.raw_targets()
    if n_train < 2:
        raise DatasetError("training side needs at least 2 rows for standardization")
    train = Dataset.from_raw(raw_X[train_idx], raw_y[train_idx], ds.source_name, ds.feature_names)
    test = Dataset(
        features=train.standardize_features(raw_X[test_idx]),
        targets=train.standardize_targets(raw_y[test_idx]),
        feature_means=train.feature_means,
        feature_stds=train.feature_stds,
        target_mean=train.target_mean,
        target_std=train.target_std,
        source_name=ds.source_name,
        feature_names=ds.feature_names,
    )
    logger.debug("Split seed=%d: %d train / %d test", spec.seed, train.n, test.n)
    return train, test


def make_synthetic(n: int, d: int = 2, signal_variance: float = 1.0, lengthscale: float = 1.0,
                   noise_variance: float = 0.01, seed: int = 0, low: float = -2.0,
                   high: float = 2.0, standardize: bool = False) -> Dataset:
    """
    Draw a dataset from a zero-mean GP prior with a squared-exponential kernel.

    Inputs are uniform in [low, high]^d; targets are f(x) + N(0, noise_variance).
    """
    from app.gp.kernel import KernelParams, SquaredExponentialARD
    from app.gp.linalg import jittered_cholesky

    rng = np.random.default_rng(seed)
    X = rng.uniform(low, high, size=(n, d))
    params = KernelParams.from_values(signal_variance, np.full(d, lengthscale))
    K = SquaredExponentialARD().eval_matrix(params, X, X)
    L, _ = jittered_cholesky(K)
    f = L @ rng.standard_normal(n)
    y = f + np.sqrt(noise_variance) * rng.standard_normal(n)
    return Dataset.from_raw(X, y, source_name=f"synthetic(n={n},d={d},seed={seed})",
                            standardize=standardize)
