"""Channel norms and channel-based selection of parameter updates.

A channel is a path through the network visiting exactly one neuron per
layer, indexed by ``(i_1, ..., i_L)``. Its norm is the sum of squared
deltas on the parameters feeding that path: the whole input row of
``i_1``, the single edge ``(i_j, i_{j-1})`` of every later layer, and the
bias of every neuron on the path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .exceptions import CapacityError, ShapeError
from .nn_core import GradientDelta, ModelParams

__all__ = [
    "MAX_CHANNELS",
    "ChannelNormTable",
    "SelectionMask",
    "MaskStats",
    "channel_norms",
    "n_selected",
    "select_top_channels",
    "mask_positive",
    "mask_negative",
    "apply_mask",
    "mask_stats",
    "complement",
]

MAX_CHANNELS = 10**7


@dataclass
class ChannelNormTable:
    """Norm of every channel, flattened in lexicographic index order."""

    layer_sizes: tuple[int, ...]
    values: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    def as_tensor(self) -> np.ndarray:
        return self.values.reshape(self.layer_sizes)

    def index_of(self, flat) -> np.ndarray:
        """Multi-indices ``(n, L)`` for flat channel positions."""
        flat = np.asarray(flat, dtype=np.int64).reshape(-1)
        return np.stack(np.unravel_index(flat, self.layer_sizes), axis=1).astype(np.int64)


@dataclass
class SelectionMask:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    selected_channel_count: int

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def true_count(self) -> int:
        return int(sum(np.count_nonzero(a) for a in self.arrays()))

    def issubset(self, other: "SelectionMask") -> bool:
        return all(not np.any(a & ~b) for a, b in zip(self.arrays(), other.arrays()))

    def equals(self, other: "SelectionMask") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


class MaskStats(NamedTuple):
    uploaded_params: int
    total_params: int
    fraction: float


def channel_norms(delta: ModelParams, limit: int = MAX_CHANNELS) -> ChannelNormTable:
    """Squared-delta norm of every channel of ``delta``.

    Raises
    ------
    CapacityError
        If the number of channels ``prod(m_j)`` exceeds ``limit``.
    """
    sizes = delta.layer_sizes
    n_channels = math.prod(sizes)
    if n_channels > limit:
        raise CapacityError(
            f"network has {' x '.join(map(str, sizes))} = {n_channels} channels, "
            f"limit is {limit}"
        )
    L = len(sizes)

    def along(vec, axis):
        shape = [1] * L
        shape[axis] = -1
        return vec.reshape(shape)

    first = np.sum(delta.weights[0] ** 2, axis=1) + delta.biases[0] ** 2
    tensor = np.broadcast_to(along(first, 0), sizes).copy()
    for j in range(1, L):
        # edge (i_j, i_{j-1}) lives on axes (j-1, j) of the channel tensor
        edges = (delta.weights[j] ** 2).T
        shape = [1] * L
        shape[j - 1], shape[j] = sizes[j - 1], sizes[j]
        tensor += edges.reshape(shape)
        tensor += along(delta.biases[j] ** 2, j)
    return ChannelNormTable(sizes, tensor.reshape(-1))


def n_selected(alpha: float, n_channels: int) -> int:
    """``ceil(alpha * C)`` with ``alpha`` read as the decimal it prints as.

    Plain float arithmetic turns e.g. ``0.1 * 30`` into ``3.0000000000000004``
    and would select one channel too many.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    return math.ceil(Fraction(repr(float(alpha))) * n_channels)


def select_top_channels(norms: ChannelNormTable, alpha: float) -> np.ndarray:
    """The ``ceil(alpha * C)`` channels with the largest norms.

    Ties go to the lexicographically smaller channel index. Returns an
    ``(k, L)`` integer array of channel indices in lexicographic order.
    """
    k = n_selected(alpha, norms.n_channels)
    # stable sort on the negated norms keeps lower flat indices first among ties
    order = np.argsort(-norms.values, kind="stable")[:k]
    return norms.index_of(np.sort(order))


def complement(channels, layer_sizes) -> np.ndarray:
    """All channels of ``layer_sizes`` not present in ``channels``."""
    sizes = tuple(layer_sizes)
    chosen = np.zeros(math.prod(sizes), dtype=bool)
    idx = _check_channels(channels, sizes)
    if len(idx):
        chosen[np.ravel_multi_index(idx.T, sizes)] = True
    rest = np.flatnonzero(~chosen)
    return np.stack(np.unravel_index(rest, sizes), axis=1).astype(np.int64).reshape(-1, len(sizes))


def _check_channels(channels, layer_sizes) -> np.ndarray:
    L = len(layer_sizes)
    idx = np.asarray(channels, dtype=np.int64)
    if idx.size == 0:
        return idx.reshape(0, L)
    if idx.ndim != 2 or idx.shape[1] != L:
        raise ValueError(f"channel indices must have shape (n, {L}), got {idx.shape}")
    bounds = np.asarray(layer_sizes)
    bad = (idx < 0) | (idx >= bounds)
    if bad.any():
        row = int(np.flatnonzero(bad.any(axis=1))[0])
        raise ValueError(
            f"channel {tuple(int(i) for i in idx[row])} out of range for layer sizes {list(layer_sizes)}"
        )
    return idx


def _coverage(idx: np.ndarray, input_dim: int, layer_sizes) -> tuple[list[np.ndarray], list[np.ndarray]]:
    weights, biases = [], []
    fan_in = input_dim
    for j, m in enumerate(layer_sizes):
        w = np.zeros((m, fan_in), dtype=bool)
        b = np.zeros(m, dtype=bool)
        if len(idx):
            if j == 0:
                w[idx[:, 0], :] = True
            else:
                w[idx[:, j], idx[:, j - 1]] = True
            b[idx[:, j]] = True
        weights.append(w)
        biases.append(b)
        fan_in = m
    return weights, biases


def _shapes(shapes) -> tuple[int, tuple[int, ...]]:
    if isinstance(shapes, ModelParams):
        return shapes.input_dim, shapes.layer_sizes
    input_dim, layer_sizes = shapes
    return int(input_dim), tuple(int(m) for m in layer_sizes)


def mask_positive(selected, shapes) -> SelectionMask:
    """Mark every parameter lying on at least one selected channel.

    ``shapes`` is either a parameter structure to mirror or an
    ``(input_dim, layer_sizes)`` pair.
    """
    input_dim, sizes = _shapes(shapes)
    idx = _check_channels(selected, sizes)
    weights, biases = _coverage(idx, input_dim, sizes)
    return SelectionMask(weights, biases, len(np.unique(idx, axis=0)))


def mask_negative(discarded, shapes) -> SelectionMask:
    """Mark every parameter that no discarded channel passes through."""
    input_dim, sizes = _shapes(shapes)
    idx = _check_channels(discarded, sizes)
    weights, biases = _coverage(idx, input_dim, sizes)
    kept = math.prod(sizes) - len(np.unique(idx, axis=0))
    return SelectionMask([~w for w in weights], [~b for b in biases], kept)


def apply_mask(delta: ModelParams, mask: SelectionMask) -> GradientDelta:
    """Zero every delta entry whose mask entry is false."""
    if len(delta.weights) != len(mask.weights) or any(
        a.shape != m.shape for a, m in zip(delta.arrays(), mask.arrays())
    ):
        raise ShapeError("mask is not shape-congruent with the delta")
    return GradientDelta(
        [np.where(m, w, 0.0) for w, m in zip(delta.weights, mask.weights)],
        [np.where(m, b, 0.0) for b, m in zip(delta.biases, mask.biases)],
    )


def mask_stats(mask: SelectionMask) -> MaskStats:
    uploaded = mask.true_count()
    total = int(sum(a.size for a in mask.arrays()))
    return MaskStats(uploaded, total, uploaded / total if total else 0.0)
