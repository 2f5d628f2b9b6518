"""Scikit-learn-style estimators wrapping the training and transfer loops.

``ConvNetClassifier`` is the trainable unit: ``fit``/``predict``/``score``
like any sklearn classifier, plus ``transform`` exposing the penultimate
features, so a fitted instance drops straight into sklearn pipelines as a
feature extractor. Set ``epsilon > 0`` to train on attacked batches.

``TransferClassifier`` adapts a fitted source model to a new task under
either transfer mode. Pass an evaluation split to ``fit`` to select the
learning rate by test metric, mirroring the sweep protocol; otherwise the
final training accuracy decides.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from . import tensor as T
from .attacks import AttackSpec
from .data import Dataset, DatasetPair
from .errors import ConfigError, ContractError
from .nets import ModelConfig, Network, build, checkpoint_load, load_checkpoint
from .training import TrainConfig, train
from .transfer import TransferMode, transfer
from .validation import check_fitted, check_images, check_labels


def _as_dataset(X, y, classes, *, split, name="estimator-data") -> Dataset:
    idx = np.searchsorted(classes, y)
    if not np.array_equal(classes[idx], y):
        raise ContractError("labels outside the fitted class set")
    return Dataset(name, X, idx, split, metric_kind="top1", class_count=len(classes))


class ConvNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Small conv net with SGD training and optional PGD-robust objective."""

    def __init__(self, base_channels=8, width_multiplier=1, num_blocks=2,
                 use_batchnorm=True, epochs=10, batch_size=32, lr=0.1,
                 momentum=0.9, weight_decay=1e-4, lr_drop_factor=10.0,
                 lr_drop_every=None, epsilon=0.0, norm="l2", attack_steps=3,
                 clip_inputs=False, random_state=0):
        self.base_channels = base_channels
        self.width_multiplier = width_multiplier
        self.num_blocks = num_blocks
        self.use_batchnorm = use_batchnorm
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_drop_factor = lr_drop_factor
        self.lr_drop_every = lr_drop_every
        self.epsilon = epsilon
        self.norm = norm
        self.attack_steps = attack_steps
        self.clip_inputs = clip_inputs
        self.random_state = random_state

    def _attack_spec(self):
        if self.epsilon <= 0:
            return None
        spec = AttackSpec.training_default(self.norm, float(self.epsilon),
                                           clip_input=self.clip_inputs)
        if self.attack_steps != 3:
            spec = AttackSpec(norm=self.norm, epsilon=float(self.epsilon),
                              steps=self.attack_steps,
                              step_size=float(self.epsilon) * 2.0 / max(self.attack_steps, 1),
                              clip_input=self.clip_inputs)
        return spec

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, n=len(X))
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ConfigError("fit needs at least two classes")
        config = ModelConfig(
            input_channels=X.shape[1], input_size=X.shape[2],
            base_channels=self.base_channels, width_multiplier=self.width_multiplier,
            num_blocks=self.num_blocks, num_classes=len(self.classes_),
            use_batchnorm=self.use_batchnorm, seed=self.random_state,
        )
        train_config = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            momentum=self.momentum, weight_decay=self.weight_decay,
            lr_drop_factor=self.lr_drop_factor, lr_drop_every=self.lr_drop_every,
            attack=self._attack_spec(), seed=self.random_state,
        )
        dataset = _as_dataset(X, y, self.classes_, split="train")
        self.net_ = build(config)
        self.net_, self.log_ = train(self.net_, dataset, train_config)
        self.net_.eval_mode()
        self.n_features_in_ = X[0].size
        return self

    def _logits(self, X):
        check_fitted(self, "net_")
        X = check_images(X)
        self.net_.eval_mode()
        chunks = []
        with T.no_grad():
            for lo in range(0, len(X), 256):
                chunks.append(self.net_.forward(X[lo:lo + 256]).data)
        return np.concatenate(chunks) if chunks else np.zeros((0, len(self.classes_)))

    def predict(self, X):
        check_fitted(self, "net_")
        return self.classes_[np.argmax(self._logits(X), axis=1)]

    def predict_proba(self, X):
        check_fitted(self, "net_")
        z = self._logits(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def transform(self, X):
        """Penultimate-layer features, one row per sample."""
        check_fitted(self, "net_")
        X = check_images(X)
        self.net_.eval_mode()
        chunks = []
        with T.no_grad():
            for lo in range(0, len(X), 256):
                chunks.append(self.net_.features(X[lo:lo + 256]).data)
        return np.concatenate(chunks) if chunks else np.zeros((0, self.net_.config.feature_dim))

    def robust_score(self, X, y, *, epsilon=None, steps=20):
        """Accuracy under a PGD evaluation attack of the given budget."""
        from .attacks import robust_accuracy

        check_fitted(self, "net_")
        X = check_images(X)
        y = check_labels(y, n=len(X))
        eps = float(self.epsilon if epsilon is None else epsilon)
        spec = (AttackSpec(norm=self.norm, epsilon=0.0, steps=0, step_size=1.0) if eps == 0
                else AttackSpec(norm=self.norm, epsilon=eps, steps=steps,
                                step_size=eps * 2.5 / steps))
        dataset = _as_dataset(X, y, self.classes_, split="test")
        return robust_accuracy(self.net_, dataset, spec)


class TransferClassifier(ClassifierMixin, BaseEstimator):
    """Fixed-feature or full-network transfer from a pretrained source.

    ``source`` may be a fitted ConvNetClassifier, a Network, checkpoint
    bytes, or a checkpoint path.
    """

    def __init__(self, source=None, mode="fixed", epochs=10, batch_size=32,
                 lrs=(0.01, 0.001), momentum=0.9, weight_decay=5e-4,
                 lr_drop_every=None, random_state=0):
        self.source = source
        self.mode = mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.lrs = lrs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_drop_every = lr_drop_every
        self.random_state = random_state

    def _resolve_source(self) -> Network:
        src = self.source
        if isinstance(src, ConvNetClassifier):
            check_fitted(src, "net_")
            return src.net_
        if isinstance(src, Network):
            return src
        if isinstance(src, (bytes, bytearray)):
            return checkpoint_load(bytes(src))
        if isinstance(src, (str, bytes)) or hasattr(src, "__fspath__"):
            return load_checkpoint(src)
        raise ConfigError(f"cannot use {type(src).__name__} as a transfer source")

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_images(X)
        y = check_labels(y, n=len(X))
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ConfigError("fit needs at least two classes")
        pretrained = self._resolve_source()
        train_ds = _as_dataset(X, y, self.classes_, split="train")
        if X_val is not None:
            X_val = check_images(X_val)
            y_val = check_labels(y_val, n=len(X_val))
            eval_ds = _as_dataset(X_val, y_val, self.classes_, split="test")
        else:
            # no held-out data: the final training split metric picks the lr
            eval_ds = _as_dataset(X, y, self.classes_, split="test")
        config = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=float(self.lrs[0]),
            momentum=self.momentum, weight_decay=self.weight_decay,
            lr_drop_every=self.lr_drop_every, seed=self.random_state,
        )
        result = transfer(pretrained, DatasetPair(train_ds, eval_ds),
                          TransferMode.parse(self.mode), config,
                          head_seed=self.random_state, lr_grid=tuple(self.lrs))
        self.net_ = result.net
        self.lr_ = result.lr
        self.per_lr_ = dict(result.per_lr)
        self.n_features_in_ = X[0].size
        return self

    def predict(self, X):
        check_fitted(self, "net_")
        X = check_images(X)
        self.net_.eval_mode()
        chunks = []
        with T.no_grad():
            for lo in range(0, len(X), 256):
                chunks.append(self.net_.forward(X[lo:lo + 256]).data)
        logits = np.concatenate(chunks) if chunks else np.zeros((0, len(self.classes_)))
        return self.classes_[np.argmax(logits, axis=1)]

    def transform(self, X):
        check_fitted(self, "net_")
        X = check_images(X)
        self.net_.eval_mode()
        with T.no_grad():
            return np.concatenate([
                self.net_.features(X[lo:lo + 256]).data for lo in range(0, len(X), 256)
            ]) if len(X) else np.zeros((0, self.net_.config.feature_dim))
