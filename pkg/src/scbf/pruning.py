"""APoZ scoring and structural neuron pruning of hidden layers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import SynchronizationError
from .nn_core import ModelParams, NetConfig, forward

__all__ = [
    "PruneState",
    "apoz_scores",
    "select_prune",
    "remove_neurons",
    "prune_step",
    "mirror_prune",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PruneState:
    original_neuron_count: int
    theta: float
    theta_total: float
    pruned_count: int = 0

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if not 0.0 < self.theta_total < 1.0:
            raise ValueError(f"theta_total must be in (0, 1), got {self.theta_total}")

    @classmethod
    def for_network(cls, layer_sizes, theta: float, theta_total: float) -> "PruneState":
        return cls(sum(layer_sizes[:-1]), theta, theta_total)

    @property
    def cap(self) -> int:
        """Most hidden neurons that may ever be removed."""
        return math.ceil(self.theta_total * self.original_neuron_count)

    @property
    def per_step(self) -> int:
        return math.ceil(self.theta * self.original_neuron_count)

    @property
    def pruned_fraction(self) -> float:
        if not self.original_neuron_count:
            return 0.0
        return self.pruned_count / self.original_neuron_count

    def should_prune(self) -> bool:
        # pruned_count < ceil(theta_total * n) implies pruned_fraction < theta_total
        return self.pruned_count < self.cap


def apoz_scores(params: ModelParams, validation_inputs) -> list[np.ndarray]:
    """Fraction of validation examples on which each hidden neuron outputs exactly zero.

    One vector per hidden layer; the output layer is never scored.
    """
    x = np.asarray(validation_inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("APoZ needs a non-empty validation set")
    acts = forward(params, x)[:-1]
    return [np.count_nonzero(a == 0.0, axis=0) / x.shape[0] for a in acts]


def select_prune(scores: list[np.ndarray], n: int) -> list[np.ndarray]:
    """Pick up to ``n`` hidden neurons with the highest APoZ across all layers.

    Ranking is by score descending, then layer, then neuron index. A
    candidate that would leave its layer empty is skipped and the next one
    taken. Returns sorted index arrays, one per hidden layer.
    """
    layer = np.concatenate([np.full(s.size, j) for j, s in enumerate(scores)]) if scores else np.empty(0)
    neuron = np.concatenate([np.arange(s.size) for s in scores]) if scores else np.empty(0)
    flat = np.concatenate(scores) if scores else np.empty(0)
    order = np.lexsort((neuron, layer, -flat))

    remaining = [s.size for s in scores]
    chosen: list[list[int]] = [[] for _ in scores]
    taken = 0
    for pos in order:
        if taken >= n:
            break
        j = int(layer[pos])
        if remaining[j] <= 1:
            logger.info("skipping layer %d neuron %d: layer would become empty", j, neuron[pos])
            continue
        remaining[j] -= 1
        chosen[j].append(int(neuron[pos]))
        taken += 1
    return [np.array(sorted(c), dtype=np.int64) for c in chosen]


def remove_neurons(params: ModelParams, pruned: list[np.ndarray]) -> ModelParams:
    """Delete hidden neurons: their rows in ``W_j``/``B_j`` and columns in ``W_{j+1}``."""
    weights = [w.copy() for w in params.weights]
    biases = [b.copy() for b in params.biases]
    if len(pruned) != len(weights) - 1:
        raise SynchronizationError(
            f"pruned indices cover {len(pruned)} hidden layers, model has {len(weights) - 1}"
        )
    for j, idx in enumerate(pruned):
        if len(idx) == 0:
            continue
        if np.max(idx) >= biases[j].shape[0]:
            raise SynchronizationError(
                f"layer {j} has {biases[j].shape[0]} neurons, cannot remove index {int(np.max(idx))}"
            )
        weights[j] = np.delete(weights[j], idx, axis=0)
        biases[j] = np.delete(biases[j], idx)
        weights[j + 1] = np.delete(weights[j + 1], idx, axis=1)
    return type(params)(weights, biases)


def prune_step(params: ModelParams, config: NetConfig, scores: list[np.ndarray], state: PruneState):
    """Remove one schedule step of hidden neurons from the server model.

    Returns ``(params, config, state, pruned_indices)`` where the indices
    refer to positions in the layers before removal.
    """
    n = min(state.per_step, state.cap - state.pruned_count)
    if n <= 0:
        return params, config, state, [np.empty(0, dtype=np.int64) for _ in scores]
    pruned = select_prune(scores, n)
    new_params = remove_neurons(params, pruned)
    new_config = replace(config, layer_sizes=new_params.layer_sizes)
    removed = sum(len(p) for p in pruned)
    return new_params, new_config, replace(state, pruned_count=state.pruned_count + removed), pruned


def mirror_prune(params: ModelParams, pre_prune_sizes, pruned: list[np.ndarray]) -> ModelParams:
    """Apply the server's structural removals to a client model."""
    if tuple(params.layer_sizes) != tuple(pre_prune_sizes):
        raise SynchronizationError(
            f"client layer sizes {list(params.layer_sizes)} differ from pre-prune server "
            f"sizes {list(pre_prune_sizes)}"
        )
    if all(len(p) == 0 for p in pruned):
        return params
    return remove_neurons(params, pruned)
