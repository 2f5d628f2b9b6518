"""Dataset ingestion, synthetic generators, and resolution transforms.

Two generators cover the desk-scale experiments: ``make_single_pixel``
builds the two-class task whose label is carried entirely by one pixel
(pixel (0,0) of channel 0 equals delta*y), and ``make_blobs`` builds a
multiclass task whose class templates sit at an exact, configurable L2
separation — the granularity knob.

File format: one JSON header line, then the raw little-endian float64
image block, then little-endian int32 labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DatasetIOError
from .tensor import fnv1a64

TOP1 = "top1"
MEAN_PER_CLASS = "mean_per_class"


@dataclass
class Dataset:
    """One split of a labeled image collection; immutable after creation."""

    name: str
    images: np.ndarray  # (N,C,H,W) float64 in [0,1]
    labels: np.ndarray  # (N,) int64
    split: str
    metric_kind: str = TOP1
    class_count: int = 2
    orientation_sensitive: bool = False

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64, order="C")
        self.labels = np.asarray(self.labels, dtype=np.int64, order="C")
        if self.images.ndim != 4:
            raise ConfigError(f"dataset {self.name}: images must be (N,C,H,W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ConfigError(f"dataset {self.name}: labels shape {self.labels.shape} does not match images")
        if self.split not in ("train", "test"):
            raise ConfigError(f"dataset {self.name}: split must be 'train' or 'test', got {self.split!r}")
        if self.metric_kind not in (TOP1, MEAN_PER_CLASS):
            raise ConfigError(f"dataset {self.name}: unknown metric kind {self.metric_kind!r}")
        if self.labels.size:
            if self.labels.min() < 0 or self.labels.max() >= self.class_count:
                raise ConfigError(f"dataset {self.name}: labels outside [0, {self.class_count})")
            if not np.isfinite(self.images).all():
                raise ConfigError(f"dataset {self.name}: non-finite pixel values")
            if self.images.min() < 0.0 or self.images.max() > 1.0:
                raise ConfigError(f"dataset {self.name}: pixels outside [0,1]")
        if self.split == "train":
            present = np.unique(self.labels)
            missing = sorted(set(range(self.class_count)) - set(present.tolist()))
            if missing:
                raise ConfigError(f"dataset {self.name}: classes {missing} missing from train split")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    @property
    def geometry(self):
        return self.images.shape[1:]

    def header(self) -> dict:
        return {
            "name": self.name,
            "shape": list(self.images.shape),
            "class_count": self.class_count,
            "metric_kind": self.metric_kind,
            "split": self.split,
            "orientation_sensitive": self.orientation_sensitive,
        }

    def content_hash(self) -> str:
        payload = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("ascii")
        payload += self.images.astype("<f8").tobytes()
        payload += self.labels.astype("<i4").tobytes()
        return f"{fnv1a64(payload):016x}"

    def with_images(self, images, name=None) -> "Dataset":
        return Dataset(name=name or self.name, images=images, labels=self.labels.copy(),
                       split=self.split, metric_kind=self.metric_kind,
                       class_count=self.class_count,
                       orientation_sensitive=self.orientation_sensitive)


@dataclass(frozen=True)
class DatasetPair:
    train: Dataset
    test: Dataset

    def __post_init__(self):
        if self.train.class_count != self.test.class_count:
            raise ConfigError("dataset pair: class counts differ between splits")

    @property
    def name(self):
        return self.train.name

    @property
    def class_count(self):
        return self.train.class_count

    @property
    def metric_kind(self):
        return self.train.metric_kind


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the synthetic generators; ``kind`` selects which
    fields apply. ``delta`` is the single-pixel class offset; ``margin``
    is the exact pairwise template separation for blobs."""

    kind: str
    n_per_class: int = 20
    channels: int = 1
    size: int = 8
    seed: int = 0
    delta: float = 0.1            # single_pixel
    sigma: float = 0.05           # blobs
    margin: float = 0.5           # blobs
    class_count: int = 2          # blobs
    metric_kind: str = TOP1

    def __post_init__(self):
        if self.kind not in ("single_pixel", "blobs"):
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        if self.n_per_class < 2:
            raise ConfigError("n_per_class must be at least 2 so both splits see every class")
        if self.channels < 1 or self.size < 1:
            raise ConfigError("image geometry must be positive")


def _split_per_class(images, labels, class_count, rng):
    """50/50 per-class split; order within each split is shuffled by seed."""
    train_idx, test_idx = [], []
    for c in range(class_count):
        idx = np.nonzero(labels == c)[0]
        half = (len(idx) + 1) // 2
        train_idx.extend(idx[:half])
        test_idx.extend(idx[half:])
    train_idx = np.array(train_idx)[rng.permutation(len(train_idx))]
    test_idx = np.array(test_idx)[rng.permutation(len(test_idx))]
    return (images[train_idx], labels[train_idx]), (images[test_idx], labels[test_idx])


def make_single_pixel(spec: SyntheticSpec) -> DatasetPair:
    """Two classes separated only by pixel (0,0) of channel 0.

    Class-0 images are all zero; class-1 images carry ``delta`` in that
    one pixel, so the inter-class L2 distance is exactly ``delta``.
    """
    if spec.kind != "single_pixel":
        raise ConfigError(f"make_single_pixel: spec kind is {spec.kind!r}")
    if not 0.0 < spec.delta <= 1.0:
        raise ConfigError(f"single_pixel delta must lie in (0, 1], got {spec.delta}")
    n = spec.n_per_class
    images = np.zeros((2 * n, spec.channels, spec.size, spec.size))
    labels = np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)])
    images[n:, 0, 0, 0] = spec.delta
    rng = np.random.default_rng(spec.seed)
    (xtr, ytr), (xte, yte) = _split_per_class(images, labels, 2, rng)
    name = f"single_pixel_d{spec.delta}"
    common = dict(metric_kind=spec.metric_kind, class_count=2, orientation_sensitive=True)
    return DatasetPair(
        Dataset(name, xtr, ytr, "train", **common),
        Dataset(name, xte, yte, "test", **common),
    )


def make_blobs(spec: SyntheticSpec) -> DatasetPair:
    """Gaussian clouds around class templates at exact L2 separation.

    Templates are 0.5 everywhere except one distinct marker pixel per
    class raised by margin/sqrt(2), so any two templates are exactly
    ``margin`` apart before noise. Samples are clipped back to [0,1].
    """
    if spec.kind != "blobs":
        raise ConfigError(f"make_blobs: spec kind is {spec.kind!r}")
    if spec.class_count < 2:
        raise ConfigError(f"blobs class_count must be at least 2, got {spec.class_count}")
    if spec.margin <= 0:
        raise ConfigError(f"blobs margin must be positive, got {spec.margin}")
    amp = spec.margin / math.sqrt(2.0)
    if amp > 0.5:
        raise ConfigError(f"blobs margin {spec.margin} too large for the [0,1] range (max {0.5 * math.sqrt(2.0):.6f})")
    dim = spec.channels * spec.size * spec.size
    if spec.class_count > dim:
        raise ConfigError(f"blobs needs one marker pixel per class: {spec.class_count} classes > {dim} pixels")
    if spec.sigma < 0:
        raise ConfigError(f"blobs sigma must be nonnegative, got {spec.sigma}")

    rng = np.random.default_rng(spec.seed)
    markers = rng.permutation(dim)[: spec.class_count]
    templates = np.full((spec.class_count, dim), 0.5)
    templates[np.arange(spec.class_count), markers] += amp

    n = spec.n_per_class
    images = np.empty((spec.class_count * n, dim))
    labels = np.repeat(np.arange(spec.class_count, dtype=np.int64), n)
    for c in range(spec.class_count):
        noise = rng.normal(scale=spec.sigma, size=(n, dim)) if spec.sigma > 0 else 0.0
        images[c * n:(c + 1) * n] = np.clip(templates[c] + noise, 0.0, 1.0)
    images = images.reshape(-1, spec.channels, spec.size, spec.size)

    (xtr, ytr), (xte, yte) = _split_per_class(images, labels, spec.class_count, rng)
    name = f"blobs_k{spec.class_count}_m{spec.margin}_s{spec.sigma}"
    common = dict(metric_kind=spec.metric_kind, class_count=spec.class_count,
                  orientation_sensitive=False)
    return DatasetPair(
        Dataset(name, xtr, ytr, "train", **common),
        Dataset(name, xte, yte, "test", **common),
    )


def blob_templates(spec: SyntheticSpec) -> np.ndarray:
    """The exact class templates of ``make_blobs`` (for oracle checks)."""
    rng = np.random.default_rng(spec.seed)
    dim = spec.channels * spec.size * spec.size
    markers = rng.permutation(dim)[: spec.class_count]
    templates = np.full((spec.class_count, dim), 0.5)
    templates[np.arange(spec.class_count), markers] += spec.margin / math.sqrt(2.0)
    return templates.reshape(spec.class_count, spec.channels, spec.size, spec.size)


# ---------------------------------------------------------------------------
# resizing
# ---------------------------------------------------------------------------

NEAREST = "nearest"
BILINEAR = "bilinear"


def _resize(images: np.ndarray, out_h: int, out_w: int, resampling: str) -> np.ndarray:
    if images.ndim != 4:
        raise ConfigError(f"resize expects an (N,C,H,W) batch, got shape {images.shape}")
    n, c, h, w = images.shape
    if out_h == h and out_w == w:
        return images.copy()
    if resampling == NEAREST:
        ri = np.minimum((np.arange(out_h) + 0.5) * (h / out_h), h - 1).astype(np.int64)
        ci = np.minimum((np.arange(out_w) + 0.5) * (w / out_w), w - 1).astype(np.int64)
        return images[:, :, ri][:, :, :, ci]
    if resampling != BILINEAR:
        raise ConfigError(f"unknown resampling {resampling!r}")

    def axis_weights(out_n, in_n):
        src = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
        lo = np.clip(np.floor(src), 0, in_n - 1).astype(np.int64)
        hi = np.minimum(lo + 1, in_n - 1)
        frac = np.clip(src - lo, 0.0, 1.0)
        return lo, hi, frac

    rlo, rhi, rf = axis_weights(out_h, h)
    clo, chi, cf = axis_weights(out_w, w)
    top = images[:, :, rlo] * (1.0 - rf)[None, None, :, None] + images[:, :, rhi] * rf[None, None, :, None]
    out = top[:, :, :, clo] * (1.0 - cf)[None, None, None, :] + top[:, :, :, chi] * cf[None, None, None, :]
    return np.clip(out, 0.0, 1.0)


def downscale_upscale(images: np.ndarray, low: int, high: int, resampling: str = BILINEAR) -> np.ndarray:
    """Resize to low x low, then back up to high x high.

    With nearest resampling and an integer factor high = f*low the second
    application reproduces the first bitwise: downscaling picks the block
    centers, which recovers the low-resolution image exactly.
    """
    if not 1 <= low <= high:
        raise ConfigError(f"downscale_upscale requires high >= low >= 1, got low={low}, high={high}")
    images = np.asarray(images, dtype=np.float64)
    small = _resize(images, low, low, resampling)
    return _resize(small, high, high, resampling)


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def save(dataset: Dataset, path) -> None:
    header = json.dumps(dataset.header(), sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(dataset.images.astype("<f8").tobytes())
        fh.write(dataset.labels.astype("<i4").tobytes())


def load(path) -> Dataset:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("ascii"))
            shape = tuple(int(s) for s in header["shape"])
            name = header["name"]
            class_count = int(header["class_count"])
            metric_kind = header["metric_kind"]
            split = header["split"]
            orientation = bool(header.get("orientation_sensitive", False))
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetIOError(f"{path}: bad dataset header: {exc}") from exc
        if len(shape) != 4:
            raise DatasetIOError(f"{path}: header shape {shape} is not (N,C,H,W)")
        count = int(np.prod(shape))
        blob = fh.read(8 * count)
        if len(blob) != 8 * count:
            raise DatasetIOError(f"{path}: image block truncated ({len(blob)} of {8 * count} bytes)")
        images = np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(shape)
        lab = fh.read(4 * shape[0])
        if len(lab) != 4 * shape[0]:
            raise DatasetIOError(f"{path}: label block truncated")
        labels = np.frombuffer(lab, dtype="<i4").astype(np.int64)
        if fh.read(1):
            raise DatasetIOError(f"{path}: trailing bytes after label block")
    bad = np.nonzero((labels < 0) | (labels >= class_count))[0]
    if bad.size:
        raise DatasetIOError(f"{path}: record {int(bad[0])} has label {int(labels[bad[0]])} "
                             f"outside [0, {class_count})")
    try:
        return Dataset(name, images, labels, split, metric_kind=metric_kind,
                       class_count=class_count, orientation_sensitive=orientation)
    except ConfigError as exc:
        raise DatasetIOError(f"{path}: {exc}") from exc


def save_pair(pair: DatasetPair, stem) -> tuple[str, str]:
    train_path, test_path = f"{stem}.train.ds", f"{stem}.test.ds"
    save(pair.train, train_path)
    save(pair.test, test_path)
    return train_path, test_path


def load_pair(stem) -> DatasetPair:
    return DatasetPair(load(f"{stem}.train.ds"), load(f"{stem}.test.ds"))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentPolicy:
    """Random resized crop + horizontal flip, with the usual crop ranges."""

    out_size: int
    crop_scale: tuple = (0.08, 1.0)
    crop_ratio: tuple = (0.75, 4.0 / 3.0)
    flip_prob: float = 0.5

    @classmethod
    def for_dataset(cls, dataset: Dataset, out_size: int, **kw) -> "AugmentPolicy":
        """Flips are disabled for orientation-sensitive datasets."""
        flip = 0.0 if dataset.orientation_sensitive else kw.pop("flip_prob", 0.5)
        return cls(out_size=out_size, flip_prob=flip, **kw)


def hflip(images: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(images[:, :, :, ::-1])


def augment(images: np.ndarray, policy: AugmentPolicy, rng) -> np.ndarray:
    """Seed-deterministic train-time transform.

    Per image: sample a crop of random area (within ``crop_scale`` of the
    image) and aspect ratio, resize it bilinearly to ``out_size``, then
    flip horizontally with probability ``flip_prob``. The degenerate
    policy (scale (1,1), ratio (1,1), flip 0, out_size == input) is the
    identity.
    """
    n, c, h, w = images.shape
    out = np.empty((n, c, policy.out_size, policy.out_size))
    area = h * w
    lo, hi = policy.crop_scale
    rlo, rhi = policy.crop_ratio
    for i in range(n):
        ch, cw, top, left = h, w, 0, 0
        for _ in range(10):
            target = area * rng.uniform(lo, hi)
            ratio = math.exp(rng.uniform(math.log(rlo), math.log(rhi)))
            cw_try = int(round(math.sqrt(target * ratio)))
            ch_try = int(round(math.sqrt(target / ratio)))
            if 0 < cw_try <= w and 0 < ch_try <= h:
                ch, cw = ch_try, cw_try
                top = int(rng.integers(0, h - ch + 1))
                left = int(rng.integers(0, w - cw + 1))
                break
        crop = images[i:i + 1, :, top:top + ch, left:left + cw]
        out[i] = _resize(crop, policy.out_size, policy.out_size, BILINEAR)[0]
        if policy.flip_prob > 0 and rng.uniform() < policy.flip_prob:
            out[i] = out[i, :, :, ::-1].copy()
    return out


def eval_transform(images: np.ndarray, out_size: int) -> np.ndarray:
    """Deterministic eval-time transform: resize to 8/7 of the target,
    then center crop."""
    resized = _resize(np.asarray(images, dtype=np.float64),
                      round(out_size * 8 / 7), round(out_size * 8 / 7), BILINEAR)
    h = resized.shape[2]
    off = (h - out_size) // 2
    return np.ascontiguousarray(resized[:, :, off:off + out_size, off:off + out_size])
