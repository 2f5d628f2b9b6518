"""The two transfer protocols: fixed-feature and full-network.

Fixed-feature transfer freezes every backbone weight and trains only the
new head — but the forward passes run in train mode, so batch-norm
running statistics keep moving. Full-network transfer fine-tunes all
parameters from the pretrained initialization. Both search the same
small learning-rate grid and keep the result with the best final test
metric.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .data import AugmentPolicy, Dataset, DatasetPair, augment as augment_batch, eval_transform
from .errors import ContractError
from .nets import Network, replace_head
from .stats import mean_per_class, top1
from .training import TrainConfig, TrainLog, train

DEFAULT_LR_GRID = (0.01, 0.001)


class TransferMode(enum.Enum):
    FIXED_FEATURE = "FixedFeature"
    FULL_NETWORK = "FullNetwork"

    @classmethod
    def parse(cls, value) -> "TransferMode":
        if isinstance(value, cls):
            return value
        for mode in cls:
            if value in (mode.value, mode.name, mode.value.lower()):
                return mode
        if value in ("fixed", "FIXED"):
            return cls.FIXED_FEATURE
        if value in ("full", "FULL"):
            return cls.FULL_NETWORK
        raise ContractError(f"unknown transfer mode {value!r}")


@dataclass
class TransferResult:
    net: Network
    metric: float
    lr: float
    per_lr: dict
    log: TrainLog


def evaluate_metric(net: Network, dataset: Dataset, *, use_eval_transform: bool = False) -> float:
    """Test metric in the dataset's declared metric kind, eval mode."""
    net.eval_mode()
    images = dataset.images
    if use_eval_transform:
        images = eval_transform(images, net.config.input_size)
    preds = []
    for lo in range(0, len(dataset), 256):
        preds.append(net.predict(images[lo:lo + 256]))
    preds = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    if dataset.metric_kind == "mean_per_class":
        return mean_per_class(preds, dataset.labels, dataset.class_count)
    return top1(preds, dataset.labels)


def transfer(
    pretrained: Network,
    target: DatasetPair,
    mode: TransferMode,
    config: TrainConfig,
    head_seed: int,
    *,
    lr_grid=DEFAULT_LR_GRID,
    augment_policy: Optional[AugmentPolicy] = None,
) -> TransferResult:
    """Adapt a pretrained network to ``target`` and report its test metric.

    The head is replaced with a fresh one seeded by ``head_seed``. For
    each lr in ``lr_grid`` the protocol trains an independent copy with
    ``config`` (lr overridden) and the best final test metric wins; ties
    go to the earlier grid entry. Pass ``lr_grid=None`` to use config.lr
    alone. ``augment_policy``, when given, applies the train-time
    transform to every batch and the deterministic resize+center-crop
    transform at evaluation.
    """
    mode = TransferMode.parse(mode)
    if pretrained.head_w.data.shape[0] != pretrained.config.feature_dim:
        raise ContractError(
            f"pretrained head expects feature dim {pretrained.config.feature_dim}, "
            f"found {pretrained.head_w.data.shape[0]} (corrupt checkpoint?)"
        )
    grid = tuple(lr_grid) if lr_grid else (config.lr,)

    aug = None
    if augment_policy is not None:
        if augment_policy.flip_prob > 0 and target.train.orientation_sensitive:
            raise ContractError("augment policy flips an orientation-sensitive dataset")

        def aug(images, rng):
            return augment_batch(images, augment_policy, rng)

    best = None
    per_lr = {}
    for lr in grid:
        net = replace_head(pretrained, target.class_count, head_seed)
        net.train_mode()
        cfg = replace(config, lr=lr)
        trainable = net.head_names() if mode is TransferMode.FIXED_FEATURE else None
        net, log = train(net, target.train, cfg, trainable=trainable, augment=aug)
        metric = evaluate_metric(net, target.test, use_eval_transform=augment_policy is not None)
        per_lr[lr] = metric
        if best is None or metric > best.metric:
            best = TransferResult(net=net, metric=metric, lr=lr, per_lr=per_lr, log=log)
    best.per_lr = dict(per_lr)
    return best


def probe_features(pretrained: Network, dataset: Dataset, *, batch_size: int = 256):
    """Penultimate-layer features and labels, eval mode, deterministic."""
    pretrained.eval_mode()
    feats = []
    with T.no_grad():
        for lo in range(0, len(dataset), batch_size):
            feats.append(pretrained.features(dataset.images[lo:lo + batch_size]).data)
    feature_matrix = np.concatenate(feats) if feats else np.zeros((0, pretrained.config.feature_dim))
    return feature_matrix, dataset.labels.copy()
