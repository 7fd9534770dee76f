"""
Local GP experts sharing one hyperparameter set.

Every expert is a standard zero-mean GP on its own partition. The shared
hyperparameters theta = {noise variance, kernel params} minimize the sum of the
experts' negative log marginal likelihoods.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular

from app.data.dataset import Dataset
from app.exceptions import FactorizationError, TrainingError
from app.gp.kernel import Kernel, KernelParams, SquaredExponentialARD
from app.gp.linalg import chol_solve, jittered_cholesky, log_det_from_cholesky
from app.gp.partitioner import PartitionModel
from app.models import OptimizerConfig
from app.optim import Adam
from app.parallel import parallel_map

logger = logging.getLogger('dgpselect.train')

LOG_2PI = float(np.log(2.0 * np.pi))
DEFAULT_LOG_NOISE = float(np.log(0.1))


@dataclass(frozen=True)
class SharedHyperparams:
    """theta = {sigma^2, psi}, all in log space."""
    kernel: KernelParams
    log_noise_variance: float

    def __post_init__(self):
        if not np.isfinite(self.log_noise_variance):
            raise ValueError("log noise variance must be finite")
        object.__setattr__(self, "log_noise_variance", float(self.log_noise_variance))

    @classmethod
    def default(cls, d: int) -> "SharedHyperparams":
        """Unit-scale initialization for standardized data."""
        return cls(KernelParams(0.0, np.zeros(d)), DEFAULT_LOG_NOISE)

    @classmethod
    def from_values(cls, signal_variance: float, lengthscales: Sequence[float],
                    noise_variance: float) -> "SharedHyperparams":
        return cls(KernelParams.from_values(signal_variance, lengthscales), float(np.log(noise_variance)))

    @property
    def noise_variance(self) -> float:
        return float(np.exp(self.log_noise_variance))

    @property
    def n_params(self) -> int:
        return self.kernel.d + 2

    def to_vector(self) -> np.ndarray:
        """[log sf2, log l_1..l_d, log sigma2]"""
        return np.concatenate((self.kernel.to_vector(), [self.log_noise_variance]))

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "SharedHyperparams":
        vector = np.asarray(vector, dtype=float)
        return cls(KernelParams.from_vector(vector[:-1]), float(vector[-1]))

    def as_dict(self) -> Dict[str, Union[float, List[float]]]:
        return {
            "log_signal_variance": self.kernel.log_signal_variance,
            "log_lengthscales": self.kernel.log_lengthscales.tolist(),
            "log_noise_variance": self.log_noise_variance,
        }


@dataclass(frozen=True)
class LocalPrediction:
    """Pointwise predictive mean and variance (noise included) of one expert."""
    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class ExpertModel:
    """A fitted local GP with its cached Cholesky factor and weights."""
    expert_id: int
    point_indices: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    gram_cholesky: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @classmethod
    def build(cls, expert_id: int, indices: np.ndarray, ds: Dataset,
              hyperparams: SharedHyperparams, kernel: Kernel) -> "ExpertModel":
        """
        Factorize K(X_i, X_i) + sigma^2 I for the given points.

        Raises:
            FactorizationError: Gram matrix not positive definite at maximal jitter
        """
        indices = np.asarray(indices, dtype=int)
        X = ds.features[indices]
        y = ds.targets[indices]
        C = kernel.eval_matrix(hyperparams.kernel, X, X)
        C[np.diag_indices_from(C)] += hyperparams.noise_variance
        L, jitter = jittered_cholesky(C)
        return cls(expert_id, indices, X, y, L, chol_solve(L, y), jitter)

    @property
    def size(self) -> int:
        return self.point_indices.size

    def cross_covariance(self, kernel: Kernel, hyperparams: SharedHyperparams,
                         Xstar: np.ndarray) -> np.ndarray:
        """K(X_i, X*), shape n_i x n_t."""
        return kernel.eval_matrix(hyperparams.kernel, self.inputs, Xstar)

    def solve(self, B: np.ndarray) -> np.ndarray:
        """C_i^{-1} B using the cached factor."""
        return chol_solve(self.gram_cholesky, B)


@dataclass(frozen=True)
class DistributedGP:
    """Experts fitted on a partition with shared hyperparameters."""
    kernel: Kernel
    hyperparams: SharedHyperparams
    partition: PartitionModel
    experts: Tuple[ExpertModel, ...]
    train: Dataset
    final_nlml: float = float("nan")
    initial_nlml: float = float("nan")
    history: Tuple[float, ...] = field(default=())

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def predict_local(self, Xstar: np.ndarray) -> List[LocalPrediction]:
        return parallel_map(lambda e: predict_local(e, self.hyperparams, Xstar, self.kernel), self.experts)

    def prior_variance(self, Xstar: np.ndarray) -> np.ndarray:
        """k(x*, x*) + sigma^2 for every test row."""
        return self.kernel.diag(self.hyperparams.kernel, Xstar) + self.hyperparams.noise_variance


def expert_nlml(hyperparams: SharedHyperparams, X: np.ndarray, y: np.ndarray,
                kernel: Kernel) -> Tuple[float, np.ndarray]:
    """
    Negative log marginal likelihood of one expert and its gradient.

    The gradient is taken w.r.t. [log sf2, log l_1..l_d, log sigma2] via
    0.5 * tr((C^{-1} - alpha alpha^T) dC/dtheta).
    """
    n = X.shape[0]
    C = kernel.eval_matrix(hyperparams.kernel, X, X)
    C[np.diag_indices_from(C)] += hyperparams.noise_variance
    L, _ = jittered_cholesky(C)
    alpha = chol_solve(L, y)
    value = 0.5 * float(y @ alpha) + 0.5 * log_det_from_cholesky(L) + 0.5 * n * LOG_2PI

    W = chol_solve(L, np.eye(n)) - np.outer(alpha, alpha)
    grad = np.empty(hyperparams.n_params)
    for j, dK in enumerate(kernel.grad_params(hyperparams.kernel, X)):
        grad[j] = 0.5 * float(np.sum(W * dK))
    grad[-1] = 0.5 * hyperparams.noise_variance * float(np.trace(W))
    return value, grad


def _data_blocks(ds: Dataset, parts: PartitionModel) -> List[Tuple[np.ndarray, np.ndarray]]:
    return [(ds.features[idx], ds.targets[idx]) for idx in parts.index_sets()]


def _joint_nlml_blocks(hyperparams: SharedHyperparams, blocks: List[Tuple[np.ndarray, np.ndarray]],
                       kernel: Kernel) -> Tuple[float, np.ndarray]:
    try:
        terms = parallel_map(lambda block: expert_nlml(hyperparams, block[0], block[1], kernel), blocks)
    except FactorizationError as e:
        logger.debug("NLML not finite at %s: %s", hyperparams.to_vector(), e)
        return float("inf"), np.full(hyperparams.n_params, np.nan)
    value = float(sum(t[0] for t in terms))
    grad = np.sum([t[1] for t in terms], axis=0)
    return value, grad


def joint_nlml(hyperparams: SharedHyperparams, parts: PartitionModel, ds: Dataset,
               kernel: Optional[Kernel] = None) -> Tuple[float, np.ndarray]:
    """
    Sum of the experts' NLMLs and its gradient.

    A factorization failure returns (inf, nan gradient) so optimizers can
    treat the point as divergent.
    """
    kernel = kernel or SquaredExponentialARD()
    return _joint_nlml_blocks(hyperparams, _data_blocks(ds, parts), kernel)


def build_experts(ds: Dataset, parts: PartitionModel, hyperparams: SharedHyperparams,
                  kernel: Kernel) -> Tuple[ExpertModel, ...]:
    """Factorize every expert at fixed hyperparameters."""
    return tuple(parallel_map(
        lambda item: ExpertModel.build(item[0], item[1], ds, hyperparams, kernel),
        list(enumerate(parts.index_sets())),
    ))


def _adam_run(objective, start: np.ndarray, config: OptimizerConfig) -> Tuple[Optional[np.ndarray], float, List[float]]:
    """One descent run; returns the best finite iterate, its value and the value trace."""
    x = start.copy()
    adam = Adam(config.learning_rate)
    best_x, best_value = None, float("inf")
    trace: List[float] = []
    for iteration in range(config.iterations + 1):
        value, grad = objective(x)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            logger.warning("Objective not finite at iteration %d; stopping this restart", iteration)
            break
        trace.append(value)
        if value < best_value:
            best_x, best_value = x.copy(), value
        if iteration == config.iterations:
            break
        adam.step([x], [grad])
        np.clip(x, -config.log_bound, config.log_bound, out=x)
    return best_x, best_value, trace


def fit(ds: Dataset, parts: PartitionModel, init: Optional[SharedHyperparams] = None,
        opt_config: Optional[OptimizerConfig] = None, kernel: Optional[Kernel] = None) -> DistributedGP:
    """
    Train the shared hyperparameters and build all experts at the optimum.

    The first restart starts at `init`; later restarts perturb it in log
    space. The returned NLML never exceeds the NLML at `init` whenever the
    latter is finite.

    Raises:
        TrainingError: no restart produced a finite objective
    """
    kernel = kernel or SquaredExponentialARD()
    init = init or SharedHyperparams.default(ds.d)
    config = opt_config or OptimizerConfig()
    blocks = _data_blocks(ds, parts)

    def objective(vector: np.ndarray) -> Tuple[float, np.ndarray]:
        return _joint_nlml_blocks(SharedHyperparams.from_vector(vector), blocks, kernel)

    rng = np.random.default_rng(config.seed)
    init_vector = init.to_vector()
    initial_value = objective(init_vector)[0]

    best_x, best_value, best_trace = None, float("inf"), []
    for restart in range(config.restarts):
        start = init_vector if restart == 0 else init_vector + rng.normal(0.0, config.restart_scale, init_vector.size)
        x, value, trace = _adam_run(objective, np.clip(start, -config.log_bound, config.log_bound), config)
        logger.info("Restart %d/%d: NLML %.4f -> %.4f (%d evaluations)",
                    restart + 1, config.restarts, trace[0] if trace else float("nan"), value, len(trace))
        if x is not None and value < best_value:
            best_x, best_value, best_trace = x, value, trace

    if best_x is None:
        raise TrainingError("all optimizer restarts diverged (non-finite NLML)")

    hyperparams = SharedHyperparams.from_vector(best_x)
    experts = build_experts(ds, parts, hyperparams, kernel)
    logger.info("Fitted %d experts: NLML %.4f (init %.4f), sigma2=%.4g, sf2=%.4g",
                len(experts), best_value, initial_value, hyperparams.noise_variance,
                hyperparams.kernel.signal_variance)
    return DistributedGP(kernel, hyperparams, parts, experts, ds, best_value, initial_value, tuple(best_trace))


def fit_fixed(ds: Dataset, parts: PartitionModel, hyperparams: SharedHyperparams,
              kernel: Optional[Kernel] = None) -> DistributedGP:
    """Build a DistributedGP at given hyperparameters without optimization."""
    kernel = kernel or SquaredExponentialARD()
    value = joint_nlml(hyperparams, parts, ds, kernel)[0]
    return DistributedGP(kernel, hyperparams, parts, build_experts(ds, parts, hyperparams, kernel),
                         ds, value, value)


def predict_local(expert: ExpertModel, hyperparams: SharedHyperparams, Xstar: np.ndarray,
                  kernel: Optional[Kernel] = None) -> LocalPrediction:
    """
    Predictive mean and variance of one expert at the rows of X*.

    mean = k(X*, X_i) alpha_i; var = k(x*, x*) + sigma^2 - |L_i^{-1} k(X_i, x*)|^2,
    never below the noise variance.
    """
    kernel = kernel or SquaredExponentialARD()
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    if Xstar.shape[1] != expert.inputs.shape[1]:
        raise ValueError(f"dimension mismatch: expert has {expert.inputs.shape[1]} inputs, X* has {Xstar.shape[1]}")
    if Xstar.shape[0] == 0:
        return LocalPrediction(np.empty(0), np.empty(0))

    Ks = expert.cross_covariance(kernel, hyperparams, Xstar)
    mean = Ks.T @ expert.alpha
    v = solve_triangular(expert.gram_cholesky, Ks, lower=True, check_finite=False)
    latent = kernel.diag(hyperparams.kernel, Xstar) - np.sum(v * v, axis=0)
    variance = np.maximum(latent, 0.0) + hyperparams.noise_variance
    return LocalPrediction(mean, variance)
