"""scikit-learn compatible wrapper around the federated training engine."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import type_of_target
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .config import DataSource, ExperimentConfig, HyperConfig
from .data import Cohort, SplitPartition
from .federation import run_federation
from .nn_core import predict_logit, predict_proba

__all__ = ["FederatedClassifier"]


class FederatedClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier trained by simulated federated learning.

    ``fit`` holds out ``validation_fraction`` of the rows for APoZ pruning
    (pruning methods only), deals the rest round-robin to ``n_clients``
    simulated clients and runs ``global_loops`` loops of ``method``.

    Parameters
    ----------
    method : {"scbf", "scbf_prune", "fedavg", "fedavg_prune"}
    alpha : float
        Fraction of channels each client uploads per loop (channel methods).
    selection_mode : {"positive", "negative"}
    theta, theta_total : float or None
        Per-loop and cumulative fraction of hidden neurons to prune;
        required by the ``*_prune`` methods.
    hidden_layer_sizes : tuple of int
        Widths of the relu layers; a single sigmoid output is appended.
    random_state : int
        Master seed for initialisation, splitting and client shuffles.

    Attributes
    ----------
    params_ : ModelParams
        Final server model.
    history_ : list of RoundRecord
        One record per loop, scored on ``eval_set`` when given.
    """

    def __init__(
        self,
        method="scbf",
        alpha=0.1,
        selection_mode="positive",
        theta=None,
        theta_total=None,
        global_loops=20,
        n_clients=5,
        hidden_layer_sizes=(32, 16),
        local_epochs=1,
        batch_size=32,
        learning_rate=0.1,
        validation_fraction=0.1,
        weighted_average=False,
        n_jobs=1,
        random_state=0,
    ):
        self.method = method
        self.alpha = alpha
        self.selection_mode = selection_mode
        self.theta = theta
        self.theta_total = theta_total
        self.global_loops = global_loops
        self.n_clients = n_clients
        self.hidden_layer_sizes = hidden_layer_sizes
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.weighted_average = weighted_average
        self.n_jobs = n_jobs
        self.random_state = random_state

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def _experiment_config(self, n_rows: int) -> ExperimentConfig:
        seed = self.random_state
        if seed is None:
            seed = int(np.random.SeedSequence().generate_state(1)[0])
        return ExperimentConfig(
            method=self.method,
            alpha=self.alpha,
            selection_mode=self.selection_mode,
            theta=self.theta,
            theta_total=self.theta_total,
            global_loops=self.global_loops,
            n_clients=self.n_clients,
            layer_sizes=tuple(self.hidden_layer_sizes) + (1,),
            hyper=HyperConfig(self.local_epochs, self.batch_size, self.learning_rate),
            data=DataSource(n_rows=max(n_rows, self.n_clients + 2)),
            seed=int(seed),
            n_jobs=self.n_jobs,
            weighted_average=self.weighted_average,
        )

    def _encode(self, y):
        return np.searchsorted(self.classes_, y)

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; ``eval_set=(X_eval, y_eval)`` scores every loop."""
        X, y = validate_data(self, X, y, dtype=np.float64)
        target = type_of_target(y, input_name="y", raise_unknown=True)
        if target != "binary":
            raise ValueError(f"Only binary classification is supported, got {target} targets")
        self.classes_ = np.unique(y)
        config = self._experiment_config(X.shape[0])
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")

        rng = np.random.default_rng(config.split_seed())
        order = rng.permutation(X.shape[0])
        n_val = int(round(self.validation_fraction * X.shape[0])) if config.prunes else 0
        if X.shape[0] - n_val < self.n_clients:
            raise ValueError(f"n_samples={X.shape[0]} is too few for {self.n_clients} clients")
        if config.prunes and n_val == 0:
            raise ValueError("pruning methods need validation_fraction > 0")

        full = Cohort(X, self._encode(y), binary=False)
        train = order[n_val:]
        partition = SplitPartition(
            train_clients=[full.subset(train[k::self.n_clients]) for k in range(self.n_clients)],
            validation=full.subset(order[:n_val]),
            test=None,
        )
        evaluation = None
        if eval_set is not None:
            X_eval, y_eval = check_X_y(*eval_set, dtype=np.float64)
            evaluation = Cohort(X_eval, self._encode(y_eval), binary=False)

        result = run_federation(partition, config, eval_set=evaluation)
        self.params_ = result.server.params
        self.net_config_ = result.server.net_config
        self.history_ = result.records
        self.prune_state_ = result.prune_state
        return self

    def _inputs(self, X):
        check_is_fitted(self, "params_")
        return validate_data(self, X, dtype=np.float64, reset=False)

    def predict_proba(self, X):
        X = self._inputs(X)
        p = predict_proba(self.params_, X)
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X):
        """Output logit; positive values predict ``classes_[1]``."""
        X = self._inputs(X)
        return predict_logit(self.params_, X)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]
