"""
Sampling oracles for the NPAE covariances and the BLUP, plus the
singular K_A fallback.
"""
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.aggregation.batch import aggregate_batch
from app.aggregation.npae import (
    build_npae_joint,
    npae_point,
    npae_predict,
    solve_cross_covariance,
)
from app.data.dataset import Dataset
from app.gp.expert import SharedHyperparams, fit_fixed, predict_local
from app.gp.kernel import SquaredExponentialARD
from app.gp.partitioner import partition_from_labels
from app.models import AggregationConfig

TRAIN_X = np.array([[-1.5], [-0.5], [0.2], [0.8], [1.6]])
TEST_X = np.array([0.4])
NOISE = 0.1


@pytest.fixture
def hyperparams():
    return SharedHyperparams.from_values(1.0, [1.0], NOISE)


@pytest.fixture
def two_experts(hyperparams):
    ds = Dataset.from_raw(TRAIN_X, np.zeros(5), standardize=False)
    parts = partition_from_labels(TRAIN_X, np.array([0, 0, 0, 1, 1]))
    return fit_fixed(ds, parts, hyperparams)


def _prior_draws(hyperparams, n_draws, seed):
    """Joint draws of the noisy training targets (n_draws x 5) and y* (n_draws)."""
    kernel = SquaredExponentialARD()
    Z = np.vstack((TRAIN_X, TEST_X[None, :]))
    K = kernel.eval_matrix(hyperparams.kernel, Z, Z)
    L = np.linalg.cholesky(K + 1e-12 * np.eye(6))
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n_draws, 6)) @ L.T
    y = f + np.sqrt(NOISE) * rng.standard_normal((n_draws, 6))
    return y[:, :5], y[:, 5]


def _expert_means(model, y_train):
    kernel = SquaredExponentialARD()
    columns = []
    for expert in model.experts:
        v = expert.solve(expert.cross_covariance(kernel, model.hyperparams, TEST_X[None, :]))[:, 0]
        columns.append(y_train[:, expert.point_indices] @ v)
    return np.column_stack(columns)


class TestCovarianceOracle:
    """Empirical covariances of expert means against build_npae_joint()."""

    def test_entries_within_three_standard_errors(self, two_experts, hyperparams):
        n_draws = 20000
        y_train, y_star = _prior_draws(hyperparams, n_draws, seed=11)
        mu = _expert_means(two_experts, y_train)
        joint = build_npae_joint(two_experts.experts, hyperparams, TEST_X)
        prior_var = hyperparams.kernel.signal_variance + NOISE

        for i in range(2):
            empirical = np.mean(mu[:, i] * y_star)
            se = np.sqrt((joint.K_A[i, i] * prior_var + joint.k_A[i] ** 2) / n_draws)
            assert abs(empirical - joint.k_A[i]) <= 3 * se
            for j in range(2):
                empirical = np.mean(mu[:, i] * mu[:, j])
                se = np.sqrt((joint.K_A[i, i] * joint.K_A[j, j] + joint.K_A[i, j] ** 2) / n_draws)
                assert abs(empirical - joint.K_A[i, j]) <= 3 * se

    def test_symmetric_with_matching_diagonal(self, two_experts, hyperparams):
        joint = build_npae_joint(two_experts.experts, hyperparams, TEST_X)
        assert_allclose(joint.K_A, joint.K_A.T)
        assert_allclose(np.diag(joint.K_A), joint.k_A)
        assert np.all(np.diag(joint.K_A) > 0)

    def test_single_expert_collapse(self, two_experts, hyperparams):
        joint = build_npae_joint(two_experts.experts[:1], hyperparams, TEST_X)
        assert joint.K_A.shape == (1, 1)
        assert joint.K_A[0, 0] == joint.k_A[0]

    def test_dimension_mismatch(self, two_experts, hyperparams):
        with pytest.raises(ValueError, match="dimension mismatch"):
            build_npae_joint(two_experts.experts, hyperparams, np.array([0.1, 0.2]))


class TestBlupOracle:
    """The NPAE predictor is unbiased with the advertised error variance."""

    def test_unbiased_with_matching_error_variance(self, two_experts, hyperparams):
        n_draws = 2000
        y_train, y_star = _prior_draws(hyperparams, n_draws, seed=5)
        mu = _expert_means(two_experts, y_train)
        joint = build_npae_joint(two_experts.experts, hyperparams, TEST_X)
        prior_var = hyperparams.kernel.signal_variance + NOISE

        predictions = np.array([npae_point(joint.k_A, joint.K_A, mu[t], prior_var)[0] for t in range(n_draws)])
        _, variance, _ = npae_point(joint.k_A, joint.K_A, mu[0], prior_var)
        residuals = predictions - y_star
        assert abs(residuals.mean()) <= 3 * residuals.std() / np.sqrt(n_draws)
        assert np.mean(residuals ** 2) == pytest.approx(variance, rel=0.15)

    def test_single_expert_returns_its_mean(self, two_experts, hyperparams):
        expert = two_experts.experts[1]
        joint = build_npae_joint([expert], hyperparams, TEST_X)
        mean, var = npae_predict(joint, [0.37], hyperparams, TEST_X)
        assert mean == pytest.approx(0.37, abs=1e-12)
        local = predict_local(expert, hyperparams, TEST_X[None, :])
        assert var == pytest.approx(local.variance[0], abs=1e-12)


class TestSingularCrossCovariance:
    """Duplicated experts make K_A rank deficient."""

    @pytest.fixture
    def duplicated(self, hyperparams):
        ds = Dataset.from_raw(TRAIN_X, np.sin(TRAIN_X[:, 0]), standardize=False)
        single = fit_fixed(ds, partition_from_labels(TRAIN_X, np.zeros(5, dtype=int)), hyperparams)
        twin = replace(single.experts[0], expert_id=1)
        return single, replace(single, experts=(single.experts[0], twin))

    def test_identical_rows(self, duplicated, hyperparams):
        _, model = duplicated
        joint = build_npae_joint(model.experts, hyperparams, TEST_X)
        assert_allclose(joint.K_A[0], joint.K_A[1], rtol=1e-12)

    def test_pseudo_inverse_matches_single_expert(self, duplicated, hyperparams):
        single, model = duplicated
        joint = build_npae_joint(model.experts, hyperparams, TEST_X)
        local = predict_local(single.experts[0], hyperparams, TEST_X[None, :])
        mean, var = npae_predict(joint, [local.mean[0]] * 2, hyperparams, TEST_X)
        assert mean == pytest.approx(local.mean[0], abs=1e-6)
        assert var == pytest.approx(local.variance[0], abs=1e-6)
        _, used_pinv = solve_cross_covariance(joint.K_A, joint.k_A)
        assert used_pinv

    def test_batch_flags_pseudo_inverse_points(self, duplicated):
        single, model = duplicated
        Xs = np.linspace(-1.0, 1.0, 5)[:, None]
        result = aggregate_batch(model, AggregationConfig(method="npae"), Xs)
        reference = aggregate_batch(single, AggregationConfig(method="npae"), Xs)
        assert result.pinv_points.tolist() == [0, 1, 2, 3, 4]
        assert_allclose(result.mean, reference.mean, atol=1e-6)
        assert_allclose(result.variance, reference.variance, atol=1e-6)

    def test_well_conditioned_uses_cholesky(self, rng):
        B = rng.normal(size=(4, 4))
        A = B @ B.T + np.eye(4)
        b = rng.normal(size=4)
        x, used_pinv = solve_cross_covariance(A, b)
        assert not used_pinv
        assert_allclose(x, np.linalg.solve(A, b), rtol=1e-10)
