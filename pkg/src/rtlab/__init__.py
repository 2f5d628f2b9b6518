"""rtlab: a desk-scale laboratory for robust training and transfer protocols.

The estimator API (ConvNetClassifier, TransferClassifier) is the main
entry point; the functional modules underneath expose the attack,
training, dataset, statistics, and sweep machinery directly.
"""

from .attacks import AttackSpec, pgd_attack, project, robust_accuracy
from .data import (
    AugmentPolicy, Dataset, DatasetPair, SyntheticSpec, augment, downscale_upscale,
    eval_transform, load, load_pair, make_blobs, make_single_pixel, save, save_pair,
)
from .errors import (
    CheckpointError, ConfigError, ContractError, DatasetIOError, DimensionError,
    DivergenceError, MissingArtifactError, PlanError, ReportError, RtlabError,
    TapeError,
)
from .estimators import ConvNetClassifier, TransferClassifier
from .harness import (
    ExperimentRecord, ModelRegistry, RecordStore, RegistryEntry, SweepPlan,
    granularity_experiment, pretrain, report, run_sweep, select_epsilon, width_sweep,
)
from .nets import (
    ModelConfig, Network, build, checkpoint_load, checkpoint_save, load_checkpoint,
    replace_head, save_checkpoint,
)
from .stats import (
    Bolding, TrialSet, WelchResult, aggregate, bolding_rule, mean_per_class,
    r_squared, top1, welch_t_test,
)
from .tensor import Tensor, backward, grad_check, no_grad
from .training import TrainConfig, TrainLog, lr_at, sgd_step, train
from .transfer import TransferMode, TransferResult, probe_features, transfer

__version__ = "0.1.0"

__all__ = [
    "AttackSpec", "pgd_attack", "project", "robust_accuracy",
    "AugmentPolicy", "Dataset", "DatasetPair", "SyntheticSpec", "augment",
    "downscale_upscale", "eval_transform", "load", "load_pair", "make_blobs",
    "make_single_pixel", "save", "save_pair",
    "CheckpointError", "ConfigError", "ContractError", "DatasetIOError",
    "DimensionError", "DivergenceError", "MissingArtifactError", "PlanError",
    "ReportError", "RtlabError", "TapeError",
    "ConvNetClassifier", "TransferClassifier",
    "ExperimentRecord", "ModelRegistry", "RecordStore", "RegistryEntry",
    "SweepPlan", "granularity_experiment", "pretrain", "report", "run_sweep",
    "select_epsilon", "width_sweep",
    "ModelConfig", "Network", "build", "checkpoint_load", "checkpoint_save",
    "load_checkpoint", "replace_head", "save_checkpoint",
    "Bolding", "TrialSet", "WelchResult", "aggregate", "bolding_rule",
    "mean_per_class", "r_squared", "top1", "welch_t_test",
    "Tensor", "backward", "grad_check", "no_grad",
    "TrainConfig", "TrainLog", "lr_at", "sgd_step", "train",
    "TransferMode", "TransferResult", "probe_features", "transfer",
    "__version__",
]
