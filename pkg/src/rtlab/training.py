"""SGD training loops for standard and adversarial objectives.

The adversarial branch follows the usual minimax recipe: each batch is
replaced by its PGD attack against the current parameters, and the
gradient step is taken on the loss at the attacked inputs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .attacks import AttackSpec, pgd_attack
from .errors import ConfigError, ContractError, DimensionError, DivergenceError


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_drop_factor: float = 10.0
    lr_drop_every: Optional[int] = None
    attack: Optional[AttackSpec] = None
    seed: int = 0
    # batch-norm statistics source for attack-time forward passes
    attack_bn_mode: str = "train"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lr_drop_every is not None and self.lr_drop_every < 1:
            raise ConfigError(f"lr_drop_every must be positive, got {self.lr_drop_every}")
        if self.attack_bn_mode not in ("train", "eval"):
            raise ConfigError(f"attack_bn_mode must be 'train' or 'eval', got {self.attack_bn_mode!r}")

    @classmethod
    def pretraining_preset(cls, *, epochs=90, batch_size=512, attack=None, seed=0) -> "TrainConfig":
        """The from-scratch recipe: lr 0.1 dropping 10x every 30 epochs,
        momentum 0.9, weight decay 1e-4. Epoch/batch counts scale down for
        desk-sized runs."""
        return cls(epochs=epochs, batch_size=batch_size, lr=0.1, momentum=0.9,
                   weight_decay=1e-4, lr_drop_factor=10.0, lr_drop_every=30,
                   attack=attack, seed=seed)

    @classmethod
    def transfer_preset(cls, lr, *, epochs=150, batch_size=64, seed=0) -> "TrainConfig":
        """The downstream recipe: momentum 0.9, weight decay 5e-4, lr
        dropping 10x every 50 epochs."""
        return cls(epochs=epochs, batch_size=batch_size, lr=lr, momentum=0.9,
                   weight_decay=5e-4, lr_drop_factor=10.0, lr_drop_every=50, seed=seed)


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Stepped schedule: the base lr divided by drop_factor once per
    completed drop interval. Computed by repeated division so the decades
    land exactly on their decimal literals."""
    if not 0 <= epoch < config.epochs:
        raise ContractError(f"epoch {epoch} outside [0, {config.epochs})")
    if not config.lr_drop_every:
        return config.lr
    lr = config.lr
    for _ in range(epoch // config.lr_drop_every):
        lr /= config.lr_drop_factor
    return lr


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             velocity: Sequence[np.ndarray], lr: float, momentum: float,
             weight_decay: float) -> None:
    """In-place momentum SGD: v <- momentum*v + (g + wd*p); p <- p - lr*v."""
    if not (len(params) == len(grads) == len(velocity)):
        raise DimensionError("sgd_step: params, grads, velocity lengths differ")
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise DimensionError(f"sgd_step: shape mismatch {p.shape} / {g.shape} / {v.shape}")
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    robust_train_acc: Optional[float] = None


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    wall_clock: float = 0.0
    final_train_loss: float = float("nan")
    final_train_acc: float = float("nan")

    def to_jsonl(self) -> str:
        lines = [json.dumps(vars(e), sort_keys=True) for e in self.epochs]
        lines.append(json.dumps({"wall_clock": self.wall_clock,
                                 "final_train_loss": self.final_train_loss,
                                 "final_train_acc": self.final_train_acc}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        log = cls()
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        for row in rows[:-1]:
            log.epochs.append(EpochStats(**row))
        tail = rows[-1]
        log.wall_clock = tail["wall_clock"]
        log.final_train_loss = tail["final_train_loss"]
        log.final_train_acc = tail["final_train_acc"]
        return log


def train(net, data, config: TrainConfig, *, trainable=None, augment=None):
    """Run the SGD loop; returns (net, TrainLog). The net is updated in place.

    With ``config.attack`` set, every batch is first replaced by its PGD
    attack against the current parameters (batch-norm statistics per
    ``config.attack_bn_mode``, never updated by the attack). Batch order
    is a per-epoch permutation drawn from ``config.seed``; the last
    incomplete batch is kept. ``trainable`` optionally restricts updates
    to a set of parameter names (gradients elsewhere are discarded);
    ``augment`` is an optional callable ``(images, rng) -> images`` applied
    to each batch before the attack. The input dataset is never mutated.
    """
    images, labels = data.images, data.labels
    n = len(labels)
    if n == 0:
        raise ContractError("train: empty dataset")
    net._check_geometry(images)

    named = net.parameters()
    if trainable is None:
        chosen = named
    else:
        trainable = set(trainable)
        unknown = trainable - {name for name, _ in named}
        if unknown:
            raise ConfigError(f"train: unknown trainable parameters {sorted(unknown)}")
        chosen = [(name, p) for name, p in named if name in trainable]
    velocity = [np.zeros_like(p.data) for _, p in chosen]

    order_rng = np.random.default_rng(config.seed)
    augment_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xA06]))
    attack = config.attack
    use_batch_stats = config.attack_bn_mode == "train"

    log = TrainLog()
    start = time.perf_counter()
    net.train_mode()
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        order = order_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            xb = images[idx]
            yb = labels[idx]
            if augment is not None:
                xb = augment(xb, augment_rng)
            if attack is not None:
                xb = pgd_attack(net, xb, yb, attack, bn_batch_stats=use_batch_stats)
            xt = T.Tensor(xb)
            logits = net.forward(xt)
            loss = T.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss.data):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {lo // config.batch_size}",
                    epoch=epoch, batch=lo // config.batch_size)
            T.backward(loss)
            sgd_step([p.data for _, p in chosen],
                     [p.grad for _, p in chosen],
                     velocity, lr, config.momentum, config.weight_decay)
            loss_sum += loss.item() * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == yb).sum())
        stats = EpochStats(
            epoch=epoch, lr=lr,
            train_loss=loss_sum / n, train_acc=correct / n,
            robust_train_acc=(correct / n) if attack is not None and attack.epsilon > 0 else None,
        )
        log.epochs.append(stats)
    log.wall_clock = time.perf_counter() - start
    log.final_train_loss = log.epochs[-1].train_loss
    log.final_train_acc = log.epochs[-1].train_acc
    return net, log
