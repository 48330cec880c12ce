"""Dense feed-forward network with relu hidden layers and a sigmoid output.

Parameters are plain lists of numpy arrays so that deltas, masks and
structural pruning can operate on them without a framework.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import ShapeError

__all__ = [
    "NetConfig",
    "ModelParams",
    "GradientDelta",
    "TrainHyper",
    "init_params",
    "forward",
    "predict_proba",
    "predict_logit",
    "bce_loss",
    "backward_batch",
    "local_round",
]


@dataclass(frozen=True)
class NetConfig:
    """Architecture of a binary classifier network.

    ``layer_sizes`` lists the widths of every affine layer, output last,
    so ``[32, 16, 1]`` is two relu hidden layers and one sigmoid unit.
    """

    input_dim: int
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    loss: str = "binary_cross_entropy"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(m) for m in self.layer_sizes))
        if int(self.input_dim) < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.layer_sizes:
            raise ValueError("layer_sizes must be non-empty")
        if any(m < 1 for m in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {list(self.layer_sizes)}")
        if self.layer_sizes[-1] != 1:
            raise ValueError("the output layer must have exactly one neuron")
        if self.hidden_activation != "relu":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation != "sigmoid":
            raise ValueError(f"unsupported output activation {self.output_activation!r}")
        if self.loss != "binary_cross_entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def n_params(self) -> int:
        fan_in = (self.input_dim,) + self.layer_sizes[:-1]
        return sum(m * (n + 1) for m, n in zip(self.layer_sizes, fan_in))


@dataclass
class ModelParams:
    """Per-layer weights ``(m_j, m_{j-1})`` and biases ``(m_j,)``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeError(
                f"{len(self.weights)} weight matrices but {len(self.biases)} bias vectors"
            )
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {j}: weight {w.shape} does not match bias {b.shape}")
            if j and w.shape[1] != self.weights[j - 1].shape[0]:
                raise ShapeError(
                    f"layer {j}: expects {w.shape[1]} inputs, previous layer has "
                    f"{self.weights[j - 1].shape[0]} neurons"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.biases)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        """Weights then biases, layer by layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return type(self)([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def same_shape(self, other: "ModelParams") -> bool:
        return all(a.shape == b.shape for a, b in zip(self.arrays(), other.arrays())) and len(
            self.weights
        ) == len(other.weights)

    def matches(self, config: NetConfig) -> bool:
        return self.input_dim == config.input_dim and self.layer_sizes == config.layer_sizes

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def allclose(self, other: "ModelParams", **kwargs) -> bool:
        return self.same_shape(other) and all(
            np.allclose(a, b, **kwargs) for a, b in zip(self.arrays(), other.arrays())
        )

    def equals(self, other: "ModelParams") -> bool:
        """Bit-exact equality of every entry."""
        return self.same_shape(other) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )

    def _combine(self, other, op, cls=None):
        if not self.same_shape(other):
            raise ShapeError("parameter structures are not shape-congruent")
        cls = cls or type(self)
        return cls(
            [op(a, b) for a, b in zip(self.weights, other.weights)],
            [op(a, b) for a, b in zip(self.biases, other.biases)],
        )

    def __add__(self, other):
        return self._combine(other, np.add, ModelParams)

    def __sub__(self, other):
        return self._combine(other, np.subtract, GradientDelta)

    def scale(self, factor: float):
        return type(self)([w * factor for w in self.weights], [b * factor for b in self.biases])


class GradientDelta(ModelParams):
    """Change of every parameter over one local training loop."""

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "GradientDelta":
        return cls([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])


@dataclass(frozen=True)
class TrainHyper:
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.1
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.local_epochs < 0:
            raise ValueError(f"local_epochs must be >= 0, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


def init_params(config: NetConfig, seed: int) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    fan_in = config.input_dim
    for m in config.layer_sizes:
        limit = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(m, fan_in)))
        biases.append(np.zeros(m))
        fan_in = m
    return ModelParams(weights, biases)


def _check_inputs(params: ModelParams, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"expected inputs of shape (batch, {params.input_dim}), got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("inputs contain NaN or infinite values")
    return x


def _check_labels(labels, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeError(f"{y.shape[0]} labels for {n} input rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    return y


def _pre_activations(params: ModelParams, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    last = len(params.weights) - 1
    zs, acts = [], []
    a = x
    for j, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        a = expit(z) if j == last else np.maximum(z, 0.0)
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward(params: ModelParams, inputs) -> list[np.ndarray]:
    """Activations of every layer for a batch of inputs.

    Returns a list of ``L`` arrays of shape ``(batch, m_j)``; the last
    holds the sigmoid predictions.
    """
    return _pre_activations(params, _check_inputs(params, inputs))[1]


def predict_proba(params: ModelParams, inputs) -> np.ndarray:
    """Positive-class probability for each row, shape ``(batch,)``."""
    return forward(params, inputs)[-1][:, 0]


def predict_logit(params: ModelParams, inputs) -> np.ndarray:
    """Output pre-activation for each row, shape ``(batch,)``."""
    x = _check_inputs(params, inputs)
    return _pre_activations(params, x)[0][-1][:, 0]


def bce_loss(params: ModelParams, inputs, labels) -> float:
    """Mean binary cross-entropy, evaluated from logits for stability."""
    x = _check_inputs(params, inputs)
    y = _check_labels(labels, x.shape[0])
    z = _pre_activations(params, x)[0][-1][:, 0]
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def backward_batch(params: ModelParams, inputs, labels) -> GradientDelta:
    """Gradient of the mean binary cross-entropy with respect to every parameter."""
    x = _check_inputs(params, inputs)
    if x.shape[0] == 0:
        raise ValueError("cannot differentiate over an empty batch")
    y = _check_labels(labels, x.shape[0])
    zs, acts = _pre_activations(params, x)

    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.weights)
    dz = (acts[-1] - y[:, None]) / x.shape[0]
    for j in range(len(params.weights) - 1, -1, -1):
        a_prev = acts[j - 1] if j else x
        grads_w[j] = dz.T @ a_prev
        grads_b[j] = dz.sum(axis=0)
        if j:
            dz = (dz @ params.weights[j]) * (zs[j - 1] > 0)
    return GradientDelta(grads_w, grads_b)


def local_round(params: ModelParams, inputs, labels, hyper: TrainHyper) -> tuple[ModelParams, GradientDelta]:
    """Run ``hyper.local_epochs`` epochs of mini-batch SGD on one client's data.

    The input parameters are left untouched. The returned ``new_params``
    is built as ``params + delta`` so that identity holds bit-exactly.
    """
    x = _check_inputs(params, inputs)
    if x.shape[0] == 0:
        raise ValueError("client dataset is empty")
    y = _check_labels(labels, x.shape[0])

    rng = np.random.default_rng(hyper.shuffle_seed)
    work = params.copy()
    n = x.shape[0]
    for _ in range(hyper.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            grad = backward_batch(work, x[batch], y[batch])
            for p, g in zip(work.arrays(), grad.arrays()):
                p -= hyper.learning_rate * g

    delta = work - params
    new_params = params + delta
    if not new_params.is_finite():
        raise FloatingPointError("local training diverged to non-finite parameters")
    return new_params, delta
