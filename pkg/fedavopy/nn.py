from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import tools
from .space import EPOCH_DIM, SearchSpace

PROBABILITY_FLOOR = 1e-12
UPDATE_MODES = ("velocity", "literal")


@dataclass(frozen=True)
class ModelSpec:
    """
    Layer sizes of a fully connected classifier: input dimension, any hidden widths, and the
    class count. Hidden layers use ReLU and the output a softmax. Two sizes give multinomial
    logistic regression.

    Parameters are held as one flat vector; each layer contributes its weight matrix
    (row-major, `n_in x n_out`) followed by its bias vector.
    """

    layer_sizes: tuple
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("A model needs at least an input and an output layer.")
        if any(s < 1 for s in sizes):
            raise ValueError("Layer sizes must be positive.")
        if sizes[-1] < 2:
            raise ValueError("The output layer needs at least two classes.")
        if self.activation != "relu":
            raise ValueError(f"Unsupported activation '{self.activation}'.")

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_params(self) -> int:
        return self._layout[-1][1].stop

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """
        Positions of each layer's (weights, bias) within the flat parameter vector.
        """
        return [(w, b) for w, b, _, _ in self._layout]

    def unflatten(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        params = tools._validate_vector(params, self.num_params, "params")
        return _layers(self, params)

    @cached_property
    def _layout(self) -> tuple:
        layout, offset = [], 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(offset, offset + n_in * n_out)
            b = slice(w.stop, w.stop + n_out)
            layout.append((w, b, n_in, n_out))
            offset = b.stop
        return tuple(layout)


@dataclass(frozen=True)
class HyperParams:
    """
    Local training hyperparameters of one client.

    Attributes
    ----------
    learning_rate : float
        Step size, positive.
    momentum : float
        Momentum coefficient, non-negative.
    weight_decay : float
        L2 penalty coefficient, non-negative.
    epochs : int
        Number of local passes over the client's data, at least 1.
    """

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    epochs: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative.")
        if not self.momentum >= 0:
            raise ValueError("momentum must be non-negative.")
        if not self.weight_decay >= 0:
            raise ValueError("weight_decay must be non-negative.")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError("epochs must be an integer of at least 1.")
        object.__setattr__(self, "epochs", int(self.epochs))

    @classmethod
    def from_position(cls, position: np.ndarray, space: SearchSpace) -> "HyperParams":
        """
        Decode an optimizer position ordered (eta, beta, lambda, epochs). Values are clamped
        to `space` and epochs rounded half up.
        """
        position = space.clip(tools._validate_vector(position, 4, "hyperparameter position"))
        epochs = int(np.floor(position[EPOCH_DIM] + 0.5))
        epochs = int(min(max(epochs, max(1, space.lower[EPOCH_DIM])), space.upper[EPOCH_DIM]))
        return cls(
            learning_rate=float(position[0]),
            momentum=float(position[1]),
            weight_decay=float(position[2]),
            epochs=epochs,
        )

    def to_position(self) -> np.ndarray:
        return np.array(
            [self.learning_rate, self.momentum, self.weight_decay, float(self.epochs)]
        )


@dataclass(frozen=True)
class Batch:
    """
    Feature rows with their integer class labels.
    """

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        labels = np.asarray(self.labels)
        if inputs.ndim != 2:
            raise ValueError("Inputs must be a 2-D matrix.")
        if labels.ndim != 1 or labels.shape[0] != inputs.shape[0]:
            raise ValueError("Row count of inputs and labels disagree.")
        if labels.size and (
            not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0
        ):
            raise ValueError("Labels must be non-negative integers.")
        tools._validate_finite(inputs, "Inputs must be finite.")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    def __len__(self):
        return self.inputs.shape[0]

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])


def init_params(spec: ModelSpec, seed: int, scale: float = 0.05) -> np.ndarray:
    """
    Initial parameters drawn uniformly from [-scale, scale].
    """
    return tools.gen_rng(seed).uniform(-scale, scale, spec.num_params)


def forward(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """
    Class probabilities for every row of `batch`.

    Returns
    -------
    numpy.ndarray
        `len(batch) x num_classes` matrix whose rows sum to one.
    """
    return _forward(spec, params, batch)[0][-1]


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """
    Mean negative log-probability of the true class. Probabilities are floored at 1e-12.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("Cross-entropy of an empty batch is undefined.")
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROBABILITY_FLOOR)).mean())


def gradient(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """
    Analytic gradient of the mean cross-entropy with respect to every parameter, in the
    flat layout of `ModelSpec.layer_slices`. Rows are put in a canonical order first, so the
    result is bitwise independent of row order.
    """
    if len(batch) == 0:
        raise ValueError("Gradient of an empty batch is undefined.")
    params = tools._validate_vector(params, spec.num_params, "params")
    _check_rows(spec, batch.inputs, batch.labels)
    order = _canonical_order(batch)
    return _backprop(spec, params, batch.inputs[order], batch.labels[order])


def sgd_step(
    params: np.ndarray,
    grad: np.ndarray,
    hp: HyperParams,
    velocity: np.ndarray,
    mode: str = "velocity",
) -> tuple[np.ndarray, np.ndarray]:
    """
    One SGD update with momentum and weight decay.

    Parameters
    ----------
    params : numpy.ndarray
        Current parameters.
    grad : numpy.ndarray
        Loss gradient at `params`.
    hp : HyperParams
        Learning rate, momentum and weight decay to apply.
    velocity : numpy.ndarray
        Momentum buffer, zero at the start of local training.
    mode : str
        `velocity` accumulates `v = beta * v + grad + lambda * params` and steps
        `params - eta * v`. `literal` applies
        `beta * params - eta * grad - lambda * eta * params` and leaves the velocity untouched.

    Returns
    -------
    tuple[numpy.ndarray, numpy.ndarray]
        Updated parameters and velocity.
    """
    params = np.asarray(params, dtype=float)
    grad = tools._validate_vector(grad, params.shape[0], "gradient")
    velocity = tools._validate_vector(velocity, params.shape[0], "velocity")
    tools._validate_finite(grad, "Training diverged: non-finite gradient.")

    if mode == "velocity":
        velocity = hp.momentum * velocity + grad + hp.weight_decay * params
        return params - hp.learning_rate * velocity, velocity
    elif mode == "literal":
        updated = (
            hp.momentum * params
            - hp.learning_rate * grad
            - hp.weight_decay * hp.learning_rate * params
        )
        return updated, velocity
    else:
        raise ValueError(f"Unknown update mode '{mode}'.")


def train_local(
    spec: ModelSpec,
    params: np.ndarray,
    data: Batch,
    hp: HyperParams,
    batch_size: int,
    mode: str = "velocity",
    seed: int | Sequence[int] = 0,
) -> np.ndarray:
    """
    Run `hp.epochs` epochs of mini-batch SGD over `data`.

    Each epoch shuffles the rows with a stream derived from `seed` and the epoch number, then
    walks all batches of `batch_size` rows; the last batch may be shorter.

    Parameters
    ----------
    spec : ModelSpec
        Model layout.
    params : numpy.ndarray
        Starting parameters; not modified.
    data : Batch
        Local training rows.
    hp : HyperParams
        Hyperparameters of the run.
    batch_size : int
        Rows per mini-batch.
    mode : str
        Update rule passed to `sgd_step`.
    seed : int or sequence of int
        Base seed, e.g. `(seed, round, client_id)`.

    Returns
    -------
    numpy.ndarray
        Parameters after training.
    """
    if len(data) == 0:
        raise ValueError("Cannot train on an empty shard.")
    if int(batch_size) != batch_size or batch_size < 1:
        raise ValueError("batch_size must be a positive integer.")
    keys = (seed,) if np.isscalar(seed) else tuple(seed)

    params = np.array(tools._validate_vector(params, spec.num_params, "params"), dtype=float)
    _check_rows(spec, data.inputs, data.labels)
    inputs, labels = data.inputs, data.labels
    velocity = np.zeros_like(params)
    for epoch in range(hp.epochs):
        order = tools.gen_rng(*keys, epoch).permutation(len(data))
        for start in range(0, len(data), batch_size):
            rows = order[start : start + batch_size]
            grad = _backprop(spec, params, inputs[rows], labels[rows])
            params, velocity = sgd_step(params, grad, hp, velocity, mode)
    return params


def evaluate(spec: ModelSpec, params: np.ndarray, data: Batch) -> tuple[float, float]:
    """
    Loss and accuracy of a model on a dataset. Predictions are the arg-max class, with ties
    going to the lowest class index.

    Returns
    -------
    tuple[float, float]
        Mean cross-entropy and the fraction of correctly classified rows.
    """
    if len(data) == 0:
        raise ValueError("Cannot evaluate on an empty dataset.")
    probs = forward(spec, params, data)
    accuracy = float((probs.argmax(axis=1) == data.labels).mean())
    return cross_entropy(probs, data.labels), accuracy


def _forward(spec: ModelSpec, params: np.ndarray, batch: Batch):
    _check_rows(spec, batch.inputs, batch.labels)
    return _propagate(spec.unflatten(params), batch.inputs)


def _check_rows(spec: ModelSpec, inputs: np.ndarray, labels: np.ndarray) -> None:
    if inputs.shape[1] != spec.layer_sizes[0]:
        raise ValueError(
            f"Dimension mismatch: inputs have {inputs.shape[1]} features, "
            f"model expects {spec.layer_sizes[0]}."
        )
    if labels.size and labels.max() >= spec.num_classes:
        raise ValueError("Label out of range for the model's class count.")


def _layers(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(params[w].reshape(n_in, n_out), params[b]) for w, b, n_in, n_out in spec._layout]


def _propagate(layers: list, inputs: np.ndarray):
    activations, pre_activations = [inputs], []
    for i, (w, b) in enumerate(layers):
        z = activations[-1] @ w + b
        pre_activations.append(z)
        if i < len(layers) - 1:
            activations.append(np.maximum(z, 0.0))
        else:
            activations.append(_softmax(z))
    return activations, pre_activations


def _backprop(
    spec: ModelSpec, params: np.ndarray, inputs: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    # Expects validated params and rows.
    layers = _layers(spec, params)
    activations, pre_activations = _propagate(layers, inputs)

    n = inputs.shape[0]
    delta = activations[-1].copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grad = np.empty(spec.num_params)
    for layer in reversed(range(len(layers))):
        w_slice, b_slice, _, _ = spec._layout[layer]
        grad[w_slice] = (activations[layer].T @ delta).ravel()
        grad[b_slice] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ layers[layer][0].T) * (pre_activations[layer - 1] > 0)
    return grad


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _canonical_order(batch: Batch) -> np.ndarray:
    keys = np.vstack([batch.labels[None, :].astype(float), batch.inputs.T[::-1]])
    return np.lexsort(keys)
