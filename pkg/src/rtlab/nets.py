"""Small configurable convolutional classifiers.

A Network is a stack of conv blocks (3x3 conv, optional batch norm, relu,
2x max pool), a global average pool, and a replaceable linear head. The
layer before the head is the feature representation; its width is
``base_channels * width_multiplier * 2**(num_blocks-1)``. Channel counts
double per block, so ``width_multiplier`` scales every layer.
"""

from __future__ import annotations

import io
import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ConfigError, DimensionError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 1
    input_size: int = 8
    base_channels: int = 8
    width_multiplier: int = 1
    num_blocks: int = 2
    num_classes: int = 2
    use_batchnorm: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.width_multiplier < 1:
            raise ConfigError(f"width_multiplier must be positive, got {self.width_multiplier}")
        if self.num_blocks < 1:
            raise ConfigError(f"num_blocks must be positive, got {self.num_blocks}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.input_size % (2 ** self.num_blocks) != 0:
            raise ConfigError(
                f"input_size {self.input_size} must be divisible by 2**num_blocks = {2 ** self.num_blocks}"
            )

    @property
    def feature_dim(self) -> int:
        return self.base_channels * self.width_multiplier * 2 ** (self.num_blocks - 1)

    def block_channels(self) -> list[int]:
        return [self.base_channels * self.width_multiplier * 2 ** i for i in range(self.num_blocks)]


class ConvBlock:
    def __init__(self, conv_w, conv_b, bn_gamma, bn_beta, running_mean, running_var):
        self.conv_w = conv_w
        self.conv_b = conv_b
        self.bn_gamma = bn_gamma
        self.bn_beta = bn_beta
        self.running_mean = running_mean
        self.running_var = running_var


class Network:
    """Conv stack + global average pool + linear head.

    In ``train`` mode batch norm normalizes with batch statistics and
    refreshes the running estimates; in ``eval`` mode it uses the running
    estimates, so per-sample outputs are independent of batch composition.
    """

    def __init__(self, config: ModelConfig, blocks, head_w, head_b, mode="train"):
        self.config = config
        self.blocks = blocks
        self.head_w = head_w
        self.head_b = head_b
        self.mode = mode
        self._stat_override = None  # (use_batch_stats, update_stats) while attacked

    # -- construction -----------------------------------------------------
    @classmethod
    def build(cls, config: ModelConfig) -> "Network":
        """He-normal (fan-in) initialization, fully determined by config.seed.

        The head is drawn last so backbones agree across configs that
        differ only in num_classes.
        """
        rng = np.random.default_rng(config.seed)
        blocks = []
        in_ch = config.input_channels
        for out_ch in config.block_channels():
            std = np.sqrt(2.0 / (in_ch * 9))
            conv_w = T.Tensor(rng.normal(0.0, std, size=(out_ch, in_ch, 3, 3)), requires_grad=True)
            conv_b = None if config.use_batchnorm else T.Tensor(np.zeros(out_ch), requires_grad=True)
            if config.use_batchnorm:
                bn_gamma = T.Tensor(np.ones(out_ch), requires_grad=True)
                bn_beta = T.Tensor(np.zeros(out_ch), requires_grad=True)
                running_mean = np.zeros(out_ch)
                running_var = np.ones(out_ch)
            else:
                bn_gamma = bn_beta = running_mean = running_var = None
            blocks.append(ConvBlock(conv_w, conv_b, bn_gamma, bn_beta, running_mean, running_var))
            in_ch = out_ch
        head_w, head_b = cls._init_head(config.feature_dim, config.num_classes, rng)
        return cls(config, blocks, head_w, head_b)

    @staticmethod
    def _init_head(feature_dim, num_classes, rng):
        std = np.sqrt(2.0 / feature_dim)
        w = T.Tensor(rng.normal(0.0, std, size=(feature_dim, num_classes)), requires_grad=True)
        b = T.Tensor(np.zeros(num_classes), requires_grad=True)
        return w, b

    def clone(self) -> "Network":
        """Deep copy; parameters and running statistics are independent."""
        blocks = []
        for blk in self.blocks:
            blocks.append(ConvBlock(
                _copy_param(blk.conv_w),
                _copy_param(blk.conv_b),
                _copy_param(blk.bn_gamma),
                _copy_param(blk.bn_beta),
                None if blk.running_mean is None else blk.running_mean.copy(),
                None if blk.running_var is None else blk.running_var.copy(),
            ))
        return Network(self.config, blocks, _copy_param(self.head_w), _copy_param(self.head_b), self.mode)

    # -- parameter access --------------------------------------------------
    def parameters(self):
        """(name, Tensor) pairs in declaration order."""
        out = []
        for i, blk in enumerate(self.blocks):
            out.append((f"block{i}.conv_w", blk.conv_w))
            if blk.conv_b is not None:
                out.append((f"block{i}.conv_b", blk.conv_b))
            if blk.bn_gamma is not None:
                out.append((f"block{i}.bn_gamma", blk.bn_gamma))
                out.append((f"block{i}.bn_beta", blk.bn_beta))
        out.append(("head.w", self.head_w))
        out.append(("head.b", self.head_b))
        return out

    def buffers(self):
        """(name, ndarray) pairs for the batch-norm running statistics."""
        out = []
        for i, blk in enumerate(self.blocks):
            if blk.running_mean is not None:
                out.append((f"block{i}.running_mean", blk.running_mean))
                out.append((f"block{i}.running_var", blk.running_var))
        return out

    def head_names(self):
        return {"head.w", "head.b"}

    def parameter_count(self) -> int:
        return sum(p.data.size for _, p in self.parameters())

    def backbone_bytes(self) -> bytes:
        """Concatenated backbone parameter payloads, for bitwise comparison."""
        head = self.head_names()
        return b"".join(p.data.tobytes() for name, p in self.parameters() if name not in head)

    # -- modes --------------------------------------------------------------
    def train_mode(self):
        self.mode = "train"
        return self

    def eval_mode(self):
        self.mode = "eval"
        return self

    @contextmanager
    def frozen_stats(self, use_batch_stats: bool):
        """Forward with the given statistics source and no running updates.

        Adversaries use this: the attack must see a deterministic network
        and must never move the running estimates.
        """
        prev = self._stat_override
        self._stat_override = (bool(use_batch_stats), False)
        try:
            yield self
        finally:
            self._stat_override = prev

    # -- forward ------------------------------------------------------------
    def _check_geometry(self, data):
        c, s = self.config.input_channels, self.config.input_size
        if data.ndim != 4 or data.shape[1] != c or data.shape[2] != s or data.shape[3] != s:
            raise DimensionError(
                f"network expects (N,{c},{s},{s}) inputs, got {tuple(data.shape)}"
            )

    def features(self, x, *, trace=None) -> T.Tensor:
        """Activations immediately before the head: (N, feature_dim).

        ``trace``, when given a list, collects each block's pre-relu
        activation array (a diagnostics hook, e.g. for checking that a
        gradient-check point sits away from the relu kink).
        """
        t = x if isinstance(x, T.Tensor) else T.Tensor(x)
        self._check_geometry(t.data)
        if self._stat_override is not None:
            use_batch, update = self._stat_override
        else:
            use_batch = update = self.mode == "train"
        for blk in self.blocks:
            t = T.conv2d(t, blk.conv_w, stride=1, padding=1)
            if blk.conv_b is not None:
                t = t + blk.conv_b
            if blk.bn_gamma is not None:
                t = T.batch_norm(
                    t, blk.bn_gamma, blk.bn_beta, blk.running_mean, blk.running_var,
                    training=use_batch, update_stats=update, momentum=BN_MOMENTUM, eps=BN_EPS,
                )
            if trace is not None:
                trace.append(t.data)
            t = T.relu(t)
            t = T.max_pool2(t)
        return t.mean(axis=(2, 3))

    def forward(self, x) -> T.Tensor:
        """Logits (N, num_classes)."""
        return self.features(x) @ self.head_w + self.head_b

    def loss(self, x, y) -> T.Tensor:
        return T.softmax_cross_entropy(self.forward(x), y)

    def predict(self, x) -> np.ndarray:
        """Argmax labels under the current mode, without building a tape."""
        with T.no_grad():
            return np.argmax(self.forward(x).data, axis=1)


def _copy_param(p):
    if p is None:
        return None
    return T.Tensor(p.data.copy(), requires_grad=p.requires_grad)


def build(config: ModelConfig) -> Network:
    return Network.build(config)


def replace_head(net: Network, num_classes: int, seed: int) -> Network:
    """New network with a freshly seeded head; the backbone is copied bit-exactly."""
    if num_classes < 2:
        raise ConfigError(f"replace_head: num_classes must be at least 2, got {num_classes}")
    out = net.clone()
    out.config = replace(net.config, num_classes=num_classes)
    rng = np.random.default_rng(seed)
    out.head_w, out.head_b = Network._init_head(net.config.feature_dim, num_classes, rng)
    return out


# ---------------------------------------------------------------------------
# checkpoints: magic, JSON header, tensor blobs in declaration order, FNV hash
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"RTLCKPT1"


def checkpoint_save(net: Network) -> bytes:
    names = [name for name, _ in net.parameters()] + [name for name, _ in net.buffers()]
    header = json.dumps(
        {"config": asdict(net.config), "mode": net.mode, "tensors": names},
        sort_keys=True, separators=(",", ":"),
    ).encode("ascii")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(header)
    buf.write(b"\n")
    for _, p in net.parameters():
        buf.write(T.tensor_to_bytes(p.data))
    for _, b in net.buffers():
        buf.write(T.tensor_to_bytes(b))
    body = buf.getvalue()
    return body + T.fnv1a64(body).to_bytes(8, "little")


def checkpoint_load(data: bytes) -> Network:
    if len(data) < len(CHECKPOINT_MAGIC) + 8:
        raise CheckpointError("checkpoint truncated")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:8]!r}")
    body, tail = data[:-8], data[-8:]
    if T.fnv1a64(body) != int.from_bytes(tail, "little"):
        raise CheckpointError("checkpoint content hash mismatch")
    stream = io.BytesIO(body[len(CHECKPOINT_MAGIC):])
    header_line = stream.readline()
    try:
        header = json.loads(header_line.decode("ascii"))
        config = ModelConfig(**header["config"])
        mode = header["mode"]
        names = list(header["tensors"])
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc

    net = Network.build(config)
    net.mode = mode
    slots = dict(net.parameters())
    buffer_slots = dict(net.buffers())
    expected = [name for name, _ in net.parameters()] + [name for name, _ in net.buffers()]
    if names != expected:
        raise CheckpointError(f"checkpoint tensor list {names} does not match config layout")
    try:
        for name in names:
            arr = T.read_tensor(stream)
            target = slots[name].data if name in slots else buffer_slots[name]
            if arr.shape != target.shape:
                raise CheckpointError(f"checkpoint tensor {name} has shape {arr.shape}, expected {target.shape}")
            target[...] = arr
    except DimensionError as exc:
        raise CheckpointError(f"checkpoint payload: {exc}") from exc
    if stream.read(1):
        raise CheckpointError("checkpoint has trailing bytes")
    return net


def checkpoint_hash(data: bytes) -> str:
    """Hex content hash of full checkpoint bytes, for experiment records."""
    return f"{T.fnv1a64(data):016x}"


def save_checkpoint(net: Network, path) -> bytes:
    data = checkpoint_save(net)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        return checkpoint_load(fh.read())
