"""
Covariance functions with log-parameter gradients.

The kernel interface is a small abstract base class so other covariance
functions can be added without touching the experts or the aggregators.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class KernelParams:
    """Log-parameterized kernel hyperparameters (psi)."""
    log_signal_variance: float
    log_lengthscales: np.ndarray

    def __post_init__(self):
        lengthscales = np.atleast_1d(np.array(self.log_lengthscales, dtype=float))
        if lengthscales.ndim != 1 or lengthscales.size < 1:
            raise ValueError("log_lengthscales must be a non-empty vector")
        if not (np.isfinite(self.log_signal_variance) and np.all(np.isfinite(lengthscales))):
            raise ValueError("kernel parameters must be finite")
        lengthscales.setflags(write=False)
        object.__setattr__(self, "log_signal_variance", float(self.log_signal_variance))
        object.__setattr__(self, "log_lengthscales", lengthscales)

    @classmethod
    def from_values(cls, signal_variance: float, lengthscales: Sequence[float]) -> "KernelParams":
        return cls(float(np.log(signal_variance)), np.log(np.asarray(lengthscales, dtype=float)))

    @property
    def d(self) -> int:
        return self.log_lengthscales.size

    @property
    def signal_variance(self) -> float:
        return float(np.exp(self.log_signal_variance))

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.log_signal_variance], self.log_lengthscales))

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "KernelParams":
        vector = np.asarray(vector, dtype=float)
        return cls(float(vector[0]), vector[1:])


class Kernel(ABC):
    """Stationary covariance function k(x, x') over log-parameters."""

    name: str = "kernel"

    @abstractmethod
    def eval_matrix(self, params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Cross-covariance matrix between the rows of A and B."""

    @abstractmethod
    def grad_params(self, params: KernelParams, A: np.ndarray) -> List[np.ndarray]:
        """dK(A, A)/d(log-parameter), one matrix per entry of params.to_vector()."""

    @abstractmethod
    def diag(self, params: KernelParams, A: np.ndarray) -> np.ndarray:
        """k(x, x) for every row of A."""

    def eval(self, params: KernelParams, x: np.ndarray, x_prime: np.ndarray) -> float:
        x = np.asarray(x, dtype=float).ravel()
        x_prime = np.asarray(x_prime, dtype=float).ravel()
        if x.shape != x_prime.shape:
            raise ValueError(f"dimension mismatch: {x.size} vs {x_prime.size}")
        return float(self.eval_matrix(params, x[None, :], x_prime[None, :])[0, 0])


def _check_inputs(params: KernelParams, *matrices: np.ndarray) -> List[np.ndarray]:
    checked = []
    for M in matrices:
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            M = M[None, :]
        if M.ndim != 2 or M.shape[1] != params.d:
            raise ValueError(f"dimension mismatch: expected {params.d} columns, got shape {M.shape}")
        checked.append(M)
    return checked


class SquaredExponentialARD(Kernel):
    """
    k(x, x') = sf2 * exp(-0.5 * sum_j (x_j - x'_j)^2 / l_j^2)

    One lengthscale per input dimension (automatic relevance determination).
    """

    name = "squared_exponential_ard"

    def eval_matrix(self, params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        A, B = _check_inputs(params, A, B)
        lengthscales = params.lengthscales
        sq_dist = cdist(A / lengthscales, B / lengthscales, metric="sqeuclidean")
        return params.signal_variance * np.exp(-0.5 * sq_dist)

    def grad_params(self, params: KernelParams, A: np.ndarray) -> List[np.ndarray]:
        (A,) = _check_inputs(params, A)
        K = self.eval_matrix(params, A, A)
        grads = [K.copy()]
        for j, lengthscale in enumerate(params.lengthscales):
            diff = A[:, j, None] - A[None, :, j]
            grads.append(K * (diff ** 2) / lengthscale ** 2)
        return grads

    def diag(self, params: KernelParams, A: np.ndarray) -> np.ndarray:
        (A,) = _check_inputs(params, A)
        return np.full(A.shape[0], params.signal_variance)


KERNELS = {SquaredExponentialARD.name: SquaredExponentialARD}


def get_kernel(name: str) -> Kernel:
    try:
        return KERNELS[name]()
    except KeyError:
        raise ValueError(f"unknown kernel '{name}'; available: {sorted(KERNELS)}") from None
