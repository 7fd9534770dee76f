"""
Shared test fixtures for the distributed GP tests.

Env vars are set BEFORE any app module imports so config.py picks up
test values at module-init time.
"""
import os
from pathlib import Path

# Set test env vars before any app imports
os.environ.setdefault("DGP_ENVIRONMENT", "testing")
os.environ.setdefault("DGP_N_WORKERS", "1")
os.environ.setdefault("DGP_SENTRY_DSN", "")

import numpy as np
import pytest

from app.config import settings
from app.data.dataset import make_synthetic
from app.gp.expert import SharedHyperparams, fit_fixed
from app.gp.partitioner import random_partition


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset():
    """60 points from a 2-D GP prior, used as-is (no standardization)."""
    return make_synthetic(n=60, d=2, signal_variance=1.0, lengthscale=1.0, noise_variance=0.01, seed=1)


@pytest.fixture
def true_hyperparams():
    return SharedHyperparams.from_values(1.0, [1.0, 1.0], 0.01)


@pytest.fixture
def small_model(small_dataset, true_hyperparams):
    """Three random-partition experts at the generating hyperparameters."""
    parts = random_partition(small_dataset, 3, seed=0)
    return fit_fixed(small_dataset, parts, true_hyperparams)


@pytest.fixture
def test_inputs(rng):
    return rng.uniform(-2.0, 2.0, size=(15, 2))


@pytest.fixture
def concrete_csv():
    """UCI Concrete CSV from DGP_CONCRETE_CSV_PATH; tests using it are skipped otherwise."""
    path = settings.concrete_csv_path
    if not path or not Path(path).is_file():
        pytest.skip("DGP_CONCRETE_CSV_PATH not set")
    return Path(path)
