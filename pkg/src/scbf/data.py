"""Binary-feature cohorts: CSV ingestion, a synthetic stand-in, and splitting."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .exceptions import DataParseError, SchemaError

__all__ = ["Cohort", "SplitPartition", "load_csv", "synth_cohort", "split_partition"]


@dataclass
class Cohort:
    features: np.ndarray
    labels: np.ndarray
    feature_names: Optional[list[str]] = None
    binary: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.binary and not np.isin(self.features, (0.0, 1.0)).all():
            raise ValueError("features must be binary")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")
        if self.feature_names is not None and len(self.feature_names) != self.n_features:
            raise ValueError("feature_names length does not match feature count")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Cohort":
        return Cohort(self.features[rows], self.labels[rows], self.feature_names, self.binary)


@dataclass
class SplitPartition:
    train_clients: list[Cohort]
    validation: Cohort
    test: Cohort
    # row indices into the source cohort, kept for auditing coverage
    client_rows: list[np.ndarray] = field(default_factory=list)
    validation_rows: np.ndarray = None
    test_rows: np.ndarray = None


def load_csv(path, label_column: str = "label") -> Cohort:
    """Read a comma-separated 0/1 table with one header row.

    Raises
    ------
    SchemaError
        Empty file, ragged rows, or no column named ``label_column``.
    DataParseError
        A cell other than ``0`` or ``1``; the message names row and column.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise SchemaError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise SchemaError(f"{path}: no label column {label_column!r} in header {header}")
        label_at = header.index(label_column)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}: row {line_no} has {len(row)} cells, header has {len(header)}"
                )
            values = []
            for col, cell in zip(header, row):
                cell = cell.strip()
                if cell not in ("0", "1"):
                    raise DataParseError(
                        f"{path}: row {line_no}, column {col!r}: expected 0 or 1, got {cell!r}"
                    )
                values.append(int(cell))
            rows.append(values)

    names = [h for i, h in enumerate(header) if i != label_at]
    table = np.array(rows, dtype=np.int64).reshape(len(rows), len(header))
    labels = table[:, label_at]
    features = np.delete(table, label_at, axis=1)
    return Cohort(features, labels, names)


def synth_cohort(
    n_rows: int,
    n_features: int,
    sparsity: float = 0.1,
    seed: int = 0,
    positive_rate: float = 0.3,
    signal: float = 2.5,
) -> Cohort:
    """Sparse binary features with labels from a planted logistic model.

    Features are independent Bernoulli(``sparsity``). A weight vector is
    drawn once so the logit has standard deviation about ``signal``; the
    intercept is solved so the mean label probability is ``positive_rate``.
    """
    if n_rows < 1 or n_features < 1:
        raise ValueError(f"n_rows and n_features must be >= 1, got {n_rows}, {n_features}")
    if not 0.0 < sparsity < 1.0:
        raise ValueError(f"sparsity must be in (0, 1), got {sparsity}")
    if not 0.0 < positive_rate < 1.0:
        raise ValueError(f"positive_rate must be in (0, 1), got {positive_rate}")

    rng = np.random.default_rng(seed)
    weights = rng.normal(size=n_features) * signal / np.sqrt(n_features * sparsity * (1 - sparsity))
    features = (rng.random((n_rows, n_features)) < sparsity).astype(np.float64)
    logits = features @ weights
    bound = np.abs(logits).max() + 50.0
    bias = brentq(lambda b: expit(logits + b).mean() - positive_rate, -bound, bound)
    labels = (rng.random(n_rows) < expit(logits + bias)).astype(np.int64)
    names = [f"x{i}" for i in range(n_features)]
    return Cohort(features, labels, names)


def split_partition(cohort: Cohort, n_clients: int, seed: int = 0, stratify: bool = False) -> SplitPartition:
    """Shuffle, then cut 60% train / 10% validation / 30% test.

    Training rows are dealt round-robin to ``n_clients`` clients, so client
    sizes differ by at most one. With ``stratify`` the shuffle is arranged
    so each cut keeps the cohort's class proportions as closely as
    possible.
    """
    n = len(cohort)
    if n_clients < 1:
        raise ValueError(f"n_clients must be >= 1, got {n_clients}")
    if n < n_clients + 2:
        raise ValueError(f"need at least {n_clients + 2} rows for {n_clients} clients, got {n}")

    rng = np.random.default_rng(seed)
    if stratify:
        order = _stratified_order(cohort.labels, rng)
    else:
        order = rng.permutation(n)

    n_train = max(n_clients, n * 6 // 10)
    n_val = max(1, n // 10)
    if n - n_train - n_val < 1:
        n_train, n_val = n - 2, 1
    train = order[:n_train]
    val = order[n_train:n_train + n_val]
    test = order[n_train + n_val:]

    client_rows = [train[k::n_clients] for k in range(n_clients)]
    return SplitPartition(
        train_clients=[cohort.subset(rows) for rows in client_rows],
        validation=cohort.subset(val),
        test=cohort.subset(test),
        client_rows=client_rows,
        validation_rows=val,
        test_rows=test,
    )


def _stratified_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # place each row at its class-relative quantile so every prefix is balanced
    keys = np.empty(labels.shape[0])
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        rows = rows[rng.permutation(rows.size)]
        keys[rows] = (np.arange(rows.size) + rng.random(rows.size)) / rows.size
    return np.argsort(keys, kind="stable")
