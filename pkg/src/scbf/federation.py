"""Round-synchronous simulation of K clients and one server.

Each global loop broadcasts the server model, trains every client
locally, uploads either channel-masked deltas (SCBF, added to the server)
or full models (FedAvg, averaged), optionally prunes the server and
mirrors the new structure to clients, then scores the test set.
"""
from __future__ import annotations

import logging
import time
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .channel import (
    apply_mask,
    channel_norms,
    complement,
    mask_negative,
    mask_positive,
    mask_stats,
    select_top_channels,
)
from .config import ExperimentConfig
from .data import Cohort, SplitPartition, load_csv, split_partition, synth_cohort
from .exceptions import ConfigError, SynchronizationError
from .metrics import auc_pr, auc_roc
from .nn_core import (
    GradientDelta,
    ModelParams,
    NetConfig,
    TrainHyper,
    init_params,
    local_round,
    predict_proba,
)
from .pruning import PruneState, apoz_scores, mirror_prune, prune_step

__all__ = [
    "ServerState",
    "ClientState",
    "RoundRecord",
    "FederationResult",
    "broadcast",
    "server_apply",
    "scbf_client_update",
    "scbf_round",
    "fedavg_round",
    "prune_server",
    "run_federation",
    "load_cohort",
    "run_experiment",
]

logger = logging.getLogger(__name__)


@dataclass
class ServerState:
    params: ModelParams
    net_config: NetConfig
    global_loop: int = 0

    def __post_init__(self):
        if not self.params.matches(self.net_config):
            raise SynchronizationError("server params do not match its network config")


@dataclass
class ClientState:
    client_id: int
    params: ModelParams
    inputs: np.ndarray
    labels: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]


@dataclass
class RoundRecord:
    global_loop: int
    client_uploaded: list[int]
    client_fractions: list[float]
    auc_roc: float = float("nan")
    auc_pr: float = float("nan")
    cumulative_uploaded: int = 0
    neurons_pruned_total: int = 0
    pruned_indices: list[list[int]] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    @property
    def uploaded_params(self) -> int:
        return sum(self.client_uploaded)

    def without_timing(self) -> "RoundRecord":
        return replace(self, wall_clock_seconds=0.0)


@dataclass
class FederationResult:
    records: list[RoundRecord]
    server: ServerState
    clients: list[ClientState]
    prune_state: Optional[PruneState] = None


def broadcast(server: ServerState, clients: Sequence[ClientState]) -> list[ClientState]:
    """Replace every client's model with an exact copy of the server's."""
    out = []
    for c in clients:
        if not c.params.same_shape(server.params):
            raise SynchronizationError(
                f"client {c.client_id} has layer sizes {list(c.params.layer_sizes)}, "
                f"server has {list(server.params.layer_sizes)}"
            )
        out.append(replace(c, params=server.params.copy()))
    return out


def _ordered_deltas(masked_deltas) -> list[GradientDelta]:
    if isinstance(masked_deltas, Mapping):
        return [masked_deltas[k] for k in sorted(masked_deltas)]
    return list(masked_deltas)


def server_apply(server: ServerState, masked_deltas) -> ServerState:
    """Add the sum of client deltas to the server weights.

    ``masked_deltas`` is a list in client-id order or a mapping from
    client id to delta; the sum is always taken in ascending client id.
    """
    deltas = _ordered_deltas(masked_deltas)
    for d in deltas:
        if not d.same_shape(server.params):
            raise SynchronizationError("uploaded delta is not shape-congruent with the server model")
    if not deltas:
        return replace(server, params=server.params.copy())
    total = deltas[0].copy()
    for d in deltas[1:]:
        for acc, x in zip(total.arrays(), d.arrays()):
            acc += x
    return replace(server, params=server.params + total)


def _map_clients(fn, clients, n_jobs):
    if n_jobs > 1 and len(clients) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, clients))
    return [fn(c) for c in clients]


def _hyper_for(hyper: TrainHyper, client: ClientState, seeds) -> TrainHyper:
    if seeds is None:
        return hyper
    return replace(hyper, shuffle_seed=seeds[client.client_id])


def scbf_client_update(client: ClientState, hyper: TrainHyper, alpha: float, selection_mode: str):
    """Train one client and select its channel-masked delta.

    Returns ``(new_params, masked_delta, MaskStats)``.
    """
    new_params, delta = local_round(client.params, client.inputs, client.labels, hyper)
    norms = channel_norms(delta)
    kept = select_top_channels(norms, alpha)
    if selection_mode == "positive":
        mask = mask_positive(kept, delta)
    elif selection_mode == "negative":
        mask = mask_negative(complement(kept, delta.layer_sizes), delta)
    else:
        raise ValueError(f"unknown selection mode {selection_mode!r}")
    return new_params, apply_mask(delta, mask), mask_stats(mask)


def scbf_round(
    server: ServerState,
    clients: Sequence[ClientState],
    hyper: TrainHyper,
    alpha: float,
    selection_mode: str = "positive",
    seeds: Optional[Sequence[int]] = None,
    n_jobs: int = 1,
):
    """One SCBF loop on already-synchronised clients.

    ``seeds`` optionally gives a shuffle seed per client id; otherwise every
    client uses ``hyper.shuffle_seed``. Returns ``(server, clients, record)``
    with the record's metric fields left unset.
    """
    results = _map_clients(
        lambda c: scbf_client_update(c, _hyper_for(hyper, c, seeds), alpha, selection_mode),
        clients,
        n_jobs,
    )
    new_clients = [replace(c, params=r[0]) for c, r in zip(clients, results)]
    new_server = server_apply(server, {c.client_id: r[1] for c, r in zip(clients, results)})
    new_server.global_loop = server.global_loop + 1
    record = RoundRecord(
        global_loop=new_server.global_loop,
        client_uploaded=[r[2].uploaded_params for r in results],
        client_fractions=[r[2].fraction for r in results],
    )
    return new_server, new_clients, record


def fedavg_round(
    server: ServerState,
    clients: Sequence[ClientState],
    hyper: TrainHyper,
    weighted: bool = False,
    seeds: Optional[Sequence[int]] = None,
    n_jobs: int = 1,
):
    """One Federated Averaging loop: the server takes the mean client model."""
    results = _map_clients(
        lambda c: local_round(c.params, c.inputs, c.labels, _hyper_for(hyper, c, seeds))[0],
        clients,
        n_jobs,
    )
    ordered = sorted(zip(clients, results), key=lambda cr: cr[0].client_id)
    for _, p in ordered:
        if not p.same_shape(server.params):
            raise SynchronizationError("client model is not shape-congruent with the server model")

    if weighted:
        sizes = np.array([c.n_samples for c, _ in ordered], dtype=np.float64)
        coef = sizes / sizes.sum()
        total = ordered[0][1].scale(coef[0])
        for (_, p), w in zip(ordered[1:], coef[1:]):
            for acc, x in zip(total.arrays(), p.arrays()):
                acc += w * x
        mean = ModelParams(total.weights, total.biases)
    else:
        total = ordered[0][1].copy()
        for _, p in ordered[1:]:
            for acc, x in zip(total.arrays(), p.arrays()):
                acc += x
        mean = total.scale(1.0 / len(ordered))

    n_params = server.params.n_params
    new_server = ServerState(mean, server.net_config, server.global_loop + 1)
    new_clients = [replace(c, params=p) for c, p in zip(clients, results)]
    record = RoundRecord(
        global_loop=new_server.global_loop,
        client_uploaded=[n_params] * len(clients),
        client_fractions=[1.0] * len(clients),
    )
    return new_server, new_clients, record


def prune_server(server: ServerState, clients: Sequence[ClientState], validation_inputs, state: PruneState):
    """Prune one schedule step from the server by APoZ and mirror it on clients.

    Returns ``(server, clients, state, pruned_indices)``.
    """
    pre_sizes = server.params.layer_sizes
    scores = apoz_scores(server.params, validation_inputs)
    params, net_config, state, pruned = prune_step(server.params, server.net_config, scores, state)
    new_server = ServerState(params, net_config, server.global_loop)
    new_clients = [replace(c, params=mirror_prune(c.params, pre_sizes, pruned)) for c in clients]
    return new_server, new_clients, state, pruned


def _evaluate(params: ModelParams, cohort: Optional[Cohort]) -> tuple[float, float]:
    if cohort is None or len(cohort) == 0:
        return float("nan"), float("nan")
    scores = predict_proba(params, cohort.features)
    return auc_roc(scores, cohort.labels), auc_pr(scores, cohort.labels)


def run_federation(
    partition: SplitPartition,
    config: ExperimentConfig,
    on_record: Optional[Callable[[RoundRecord], None]] = None,
    eval_set: Optional[Cohort] = None,
) -> FederationResult:
    """Run ``config.global_loops`` loops of ``config.method`` on a prepared split.

    Metrics are computed on ``eval_set`` (default: the partition's test set).
    ``on_record`` is called after every loop, so a caller can persist
    records before a later loop fails.
    """
    eval_set = partition.test if eval_set is None else eval_set
    if eval_set is not None and len(eval_set) and len(np.unique(eval_set.labels)) < 2:
        raise ConfigError("evaluation set must contain both classes")
    if config.prunes and len(partition.validation) == 0:
        raise ConfigError("pruning methods need a non-empty validation set")

    input_dim = partition.train_clients[0].n_features
    net = NetConfig(input_dim, config.layer_sizes)
    server = ServerState(init_params(net, config.init_seed()), net)
    clients = [
        ClientState(k, server.params.copy(), cohort.features, cohort.labels)
        for k, cohort in enumerate(partition.train_clients)
    ]
    hyper = TrainHyper(config.hyper.local_epochs, config.hyper.batch_size, config.hyper.learning_rate)
    prune_state = (
        PruneState.for_network(config.layer_sizes, config.theta, config.theta_total) if config.prunes else None
    )

    records: list[RoundRecord] = []
    cumulative = 0
    for loop in range(config.global_loops):
        started = time.perf_counter()
        clients = broadcast(server, clients)
        seeds = [config.client_seed(c.client_id, loop) for c in clients]
        if config.channel_based:
            server, clients, record = scbf_round(
                server, clients, hyper, config.alpha, config.selection_mode, seeds, config.n_jobs
            )
        else:
            server, clients, record = fedavg_round(
                server, clients, hyper, config.weighted_average, seeds, config.n_jobs
            )
        pruned = []
        if prune_state is not None and prune_state.should_prune():
            server, clients, prune_state, pruned = prune_server(
                server, clients, partition.validation.features, prune_state
            )
            logger.debug("loop %d: pruned %s", loop + 1, [len(p) for p in pruned])
        roc, pr = _evaluate(server.params, eval_set)
        cumulative += record.uploaded_params
        record = replace(
            record,
            auc_roc=roc,
            auc_pr=pr,
            cumulative_uploaded=cumulative,
            neurons_pruned_total=prune_state.pruned_count if prune_state else 0,
            pruned_indices=[[int(i) for i in p] for p in pruned],
            wall_clock_seconds=time.perf_counter() - started,
        )
        records.append(record)
        logger.info(
            "%s loop %d: auc_roc=%.4f auc_pr=%.4f uploaded=%d",
            config.method, record.global_loop, roc, pr, record.uploaded_params,
        )
        if on_record is not None:
            on_record(record)
    return FederationResult(records, server, clients, prune_state)


def load_cohort(config: ExperimentConfig) -> Cohort:
    d = config.data
    if d.synthetic:
        return synth_cohort(d.n_rows, d.n_features, d.sparsity, config.data_seed())
    return load_csv(d.csv, d.label_column)


def run_experiment(config: ExperimentConfig, on_record=None) -> list[RoundRecord]:
    """Load data, split it, and run the configured method end to end."""
    cohort = load_cohort(config)
    partition = split_partition(cohort, config.n_clients, config.split_seed(), config.data.stratify)
    return run_federation(partition, config, on_record).records
