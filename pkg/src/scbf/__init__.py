"""Channel-based federated learning (SCBF), its APoZ-pruned variant, and FedAvg."""
from .channel import (
    apply_mask,
    channel_norms,
    mask_negative,
    mask_positive,
    mask_stats,
    select_top_channels,
)
from .config import ExperimentConfig, load_config
from .data import load_csv, split_partition, synth_cohort
from .estimator import FederatedClassifier
from .federation import fedavg_round, run_experiment, scbf_round, server_apply
from .metrics import auc_pr, auc_roc, comm_savings
from .nn_core import GradientDelta, ModelParams, NetConfig, TrainHyper, init_params, local_round

__version__ = "0.1.0"
