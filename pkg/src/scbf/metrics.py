"""Ranking metrics for binary scores and communication accounting."""
from __future__ import annotations

from collections.abc import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .exceptions import UndefinedMetricError

__all__ = ["auc_roc", "auc_pr", "comm_savings", "total_uploaded"]


def _scored_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.shape[0]} scores for {y.shape[0]} labels")
    if not np.isfinite(s).all():
        raise ValueError("scores contain NaN or infinite values")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(bool)


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores receive their mid-rank, so each tied positive/negative
    pair counts one half.
    """
    s, y = _scored_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC-ROC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(scores, labels) -> float:
    """Average precision with step interpolation.

    Thresholds sweep the distinct scores from high to low; tied scores
    enter together, and each step adds ``precision * recall increment``.
    """
    s, y = _scored_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUC-PR needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last position of every group of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[ends]
    predicted = ends + 1
    precision = tp / predicted
    recall_step = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(precision * recall_step))


def total_uploaded(records: Iterable) -> int:
    return int(sum(r.uploaded_params for r in records))


def comm_savings(records_a: Sequence, records_b: Sequence) -> float:
    """Fraction of uploaded values saved by run A relative to run B."""
    if len(records_a) != len(records_b):
        raise ValueError(f"runs have different loop counts: {len(records_a)} vs {len(records_b)}")
    denom = total_uploaded(records_b)
    if denom == 0:
        raise UndefinedMetricError("baseline run uploaded nothing")
    return 1.0 - total_uploaded(records_a) / denom
