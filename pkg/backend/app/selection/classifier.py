"""
Feedforward softmax classifier mapping inputs to partition-label probabilities.

Plain numpy forward/backward passes; trained with mini-batch Adam on the
cross-entropy loss. A non-finite loss restarts training with half the
learning rate (tenacity), up to `TrainConfig.max_backoffs` times.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, softmax
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from app.exceptions import ClassifierDivergenceError, ClassifierError
from app.models import Activation, TrainConfig
from app.optim import Adam

logger = logging.getLogger('dgpselect.train')


@dataclass(frozen=True)
class ClassifierModel:
    """Layer sizes (d, hidden..., M) with weights of shape (fan_in, fan_out)."""
    layer_sizes: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activation: Activation = Activation.RELU

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ClassifierError("a classifier needs at least an input and an output layer")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ClassifierError("one weight matrix and bias vector per layer transition required")
        for W, b, fan_in, fan_out in zip(self.weights, self.biases, sizes[:-1], sizes[1:]):
            if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ClassifierError(f"parameter shapes {W.shape}/{b.shape} do not match {fan_in}->{fan_out}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ClassifierError("classifier parameters must be finite")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def to_payload(self) -> Dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation.value,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_payload(cls, payload: Dict) -> "ClassifierModel":
        return cls(
            layer_sizes=tuple(payload["layer_sizes"]),
            weights=tuple(np.array(W, dtype=float).reshape(a, b) for W, a, b in
                          zip(payload["weights"], payload["layer_sizes"][:-1], payload["layer_sizes"][1:])),
            biases=tuple(np.array(b, dtype=float) for b in payload["biases"]),
            activation=Activation(payload["activation"]),
        )


def init_classifier(input_dim: int, n_classes: int, hidden_layers: Sequence[int] = (64, 64),
                    activation: Activation = Activation.RELU, seed: int = 0) -> ClassifierModel:
    """He initialization for relu, Glorot for tanh; zero biases."""
    if n_classes < 1 or input_dim < 1:
        raise ClassifierError("input dimension and number of classes must be positive")
    rng = np.random.default_rng(seed)
    sizes = (input_dim, *hidden_layers, n_classes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if Activation(activation) is Activation.RELU:
            scale = np.sqrt(2.0 / fan_in)
        else:
            scale = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, scale, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ClassifierModel(sizes, tuple(weights), tuple(biases), activation)


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    return np.maximum(z, 0.0) if activation is Activation.RELU else np.tanh(z)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: Activation) -> np.ndarray:
    return (z > 0).astype(float) if activation is Activation.RELU else 1.0 - a * a


def _check_inputs(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.input_dim:
        raise ValueError(f"dimension mismatch: classifier expects {model.input_dim} inputs, got {X.shape[1]}")
    return X


def _logits(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], activation: Activation,
            X: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Output logits plus pre-activations and activations of every layer."""
    activations, pre = [X], []
    h = X
    for W, b in zip(weights[:-1], biases[:-1]):
        z = h @ W + b
        h = _activate(z, activation)
        pre.append(z)
        activations.append(h)
    return h @ weights[-1] + biases[-1], pre, activations


def forward_batch(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per input."""
    X = _check_inputs(model, X)
    logits, _, _ = _logits(model.weights, model.biases, model.activation, X)
    return softmax(logits, axis=1)


def forward(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    """Probability vector over the M partition labels for one input."""
    x = np.asarray(x, dtype=float).ravel()
    return forward_batch(model, x[None, :])[0]


def predict_labels(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    return np.argmax(forward_batch(model, X), axis=1)


def accuracy(model: ClassifierModel, X: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ClassifierError("accuracy needs at least one labelled point")
    return float(np.mean(predict_labels(model, X) == labels))


def _loss_and_grad(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], activation: Activation,
                   X: np.ndarray, labels: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    B = X.shape[0]
    logits, pre, activations = _logits(weights, biases, activation, X)
    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    loss = -float(np.mean(log_probs[np.arange(B), labels]))

    delta = np.exp(log_probs)
    delta[np.arange(B), labels] -= 1.0
    delta /= B

    n_layers = len(weights)
    grad_W: List[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        grad_W[layer] = activations[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ weights[layer].T) * _activation_grad(pre[layer - 1], activations[layer], activation)
    return loss, grad_W + grad_b


def loss_and_grad(model: ClassifierModel, X: np.ndarray, labels: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """
    Mean cross-entropy of a batch and its gradients.

    Returns:
        Tuple of (loss, gradients ordered as model.parameters(): weights then biases)

    Raises:
        ClassifierError: empty batch or labels outside 0..M-1
    """
    X = _check_inputs(model, X)
    labels = np.asarray(labels, dtype=int).ravel()
    if X.shape[0] == 0 or labels.size == 0:
        raise ClassifierError("loss of an empty batch is undefined")
    if labels.size != X.shape[0]:
        raise ClassifierError(f"{labels.size} labels for {X.shape[0]} inputs")
    if labels.min() < 0 or labels.max() >= model.n_classes:
        raise ClassifierError(f"labels must lie in 0..{model.n_classes - 1}")
    return _loss_and_grad(model.weights, model.biases, model.activation, X, labels)


def _train_once(X: np.ndarray, labels: np.ndarray, n_classes: int, config: TrainConfig,
                learning_rate: float) -> ClassifierModel:
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    n_val = int(round(config.validation_fraction * n))
    order = rng.permutation(n)
    if n_val < 1 or n - n_val < 1:
        train_idx, val_idx = order, order
    else:
        train_idx, val_idx = order[n_val:], order[:n_val]

    model = init_classifier(X.shape[1], n_classes, config.hidden_layers, config.activation, config.seed)
    n_layers = len(model.weights)
    params = [p.copy() for p in model.parameters()]
    activation = model.activation

    def evaluate(idx: np.ndarray) -> float:
        return _loss_and_grad(params[:n_layers], params[n_layers:], activation, X[idx], labels[idx])[0]

    initial_train_loss = evaluate(train_idx)
    best_val_loss = evaluate(val_idx)
    best_params = [p.copy() for p in params]
    adam = Adam(learning_rate)

    for epoch in range(config.epochs):
        shuffled = rng.permutation(train_idx)
        for start in range(0, shuffled.size, config.batch_size):
            batch = shuffled[start:start + config.batch_size]
            loss, grads = _loss_and_grad(params[:n_layers], params[n_layers:], activation, X[batch], labels[batch])
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise ClassifierDivergenceError(f"non-finite loss at epoch {epoch} (lr={learning_rate:g})")
            adam.step(params, grads)

        train_loss, val_loss = evaluate(train_idx), evaluate(val_idx)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise ClassifierDivergenceError(f"non-finite loss after epoch {epoch} (lr={learning_rate:g})")
        if val_loss < best_val_loss and train_loss <= initial_train_loss:
            best_val_loss = val_loss
            best_params = [p.copy() for p in params]
        if (epoch + 1) % 50 == 0:
            logger.debug("Classifier epoch %d: train %.4f, validation %.4f", epoch + 1, train_loss, val_loss)

    return ClassifierModel(model.layer_sizes, tuple(best_params[:n_layers]), tuple(best_params[n_layers:]),
                           activation)


def train(X: np.ndarray, labels: np.ndarray, config: Optional[TrainConfig] = None,
          n_classes: Optional[int] = None) -> ClassifierModel:
    """
    Train a classifier on partition labels.

    The returned parameters have the best validation loss among epochs whose
    training loss does not exceed the initial one.

    Args:
        X: training inputs (standardized)
        labels: partition labels 0..M-1, one per row
        config: training configuration
        n_classes: M; defaults to max(label) + 1

    Raises:
        ClassifierError: fewer than M distinct labels present
        ClassifierDivergenceError: loss still non-finite after all learning-rate backoffs
    """
    config = config or TrainConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=int).ravel()
    if labels.size != X.shape[0] or labels.size == 0:
        raise ClassifierError(f"{labels.size} labels for {X.shape[0]} inputs")
    M = int(n_classes if n_classes is not None else labels.max() + 1)
    if labels.min() < 0 or labels.max() >= M:
        raise ClassifierError(f"labels must lie in 0..{M - 1}")
    present = np.unique(labels).size
    if present < M:
        raise ClassifierError(f"only {present} of {M} labels present in the training data")

    retrying = Retrying(
        stop=stop_after_attempt(config.max_backoffs + 1),
        retry=retry_if_exception_type(ClassifierDivergenceError),
        before_sleep=lambda state: logger.warning(
            "Classifier diverged (attempt %d/%d): %s; halving learning rate",
            state.attempt_number, config.max_backoffs + 1, state.outcome.exception()
        ),
        reraise=True,
    )
    for attempt in retrying:
        with attempt:
            learning_rate = config.learning_rate * 0.5 ** (attempt.retry_state.attempt_number - 1)
            model = _train_once(X, labels, M, config, learning_rate)
    logger.info("Classifier trained on %d points, %d classes: accuracy %.3f",
                X.shape[0], M, accuracy(model, X, labels))
    return model
