"""PGD attacks under L2 and Linf budgets with exact ball projections.

``project`` treats its argument as one flat vector. Inside ``pgd_attack``
the same projection is applied per sample (axis 0 of the batch), because
the perturbation budget binds each example separately.
"""

from __future__ import annotations

import json
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError

L2 = "l2"
LINF = "linf"

# slack on the ball radius so projection is bitwise idempotent
_PROJ_TOL = 1e-12


@dataclass(frozen=True)
class AttackSpec:
    """Norm kind, budget, and step schedule of one PGD attack.

    ``clip_input`` optionally clamps the attacked input to [0,1] after
    each projection; it is off by default.
    """

    norm: str
    epsilon: float
    steps: int
    step_size: float
    random_start: bool = False
    clip_input: bool = False

    def __post_init__(self):
        if self.norm not in (L2, LINF):
            raise ConfigError(f"attack norm must be 'l2' or 'linf', got {self.norm!r}")
        if self.epsilon < 0:
            raise ConfigError(f"attack epsilon must be nonnegative, got {self.epsilon}")
        if self.steps < 0:
            raise ConfigError(f"attack steps must be nonnegative, got {self.steps}")
        if self.step_size <= 0 and self.epsilon > 0 and self.steps > 0:
            raise ConfigError(f"attack step_size must be positive, got {self.step_size}")

    @classmethod
    def training_default(cls, norm: str, epsilon: float, **kw) -> "AttackSpec":
        """3 steps of size 2*epsilon/3, no random start."""
        return cls(norm=norm, epsilon=epsilon, steps=3, step_size=epsilon * 2.0 / 3.0, **kw)

    @classmethod
    def evaluation_default(cls, norm: str, epsilon: float, **kw) -> "AttackSpec":
        """A stronger 20-step attack for robust-accuracy evaluation."""
        return cls(norm=norm, epsilon=epsilon, steps=20, step_size=epsilon * 2.5 / 20.0, **kw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AttackSpec":
        try:
            return cls(**json.loads(text))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad attack spec: {exc}") from exc


@dataclass
class AttackDiagnostics:
    """Per-attack bookkeeping: steps where a sample had zero gradient."""

    zero_grad_skips: list = field(default_factory=list)  # (step, sample) pairs


def project(delta, spec: AttackSpec):
    """Nearest point of the epsilon-ball, treating ``delta`` as one vector.

    L2 rescales by min(1, eps/||delta||) (zero norm is a no-op); Linf
    clamps coordinates to [-eps, eps]. Points already inside the ball are
    returned unchanged bitwise, which makes the projection idempotent.
    """
    was_tensor = isinstance(delta, T.Tensor)
    d = delta.data if was_tensor else np.asarray(delta, dtype=np.float64)
    if spec.norm == LINF:
        out = np.clip(d, -spec.epsilon, spec.epsilon)
    else:
        n = float(np.sqrt(np.sum(d * d)))
        if n > spec.epsilon * (1.0 + _PROJ_TOL):
            out = d * (spec.epsilon / n)
        else:
            out = d.copy()
    return T.Tensor(out) if was_tensor else out


def _project_rows(delta, spec: AttackSpec):
    """Per-sample projection over axis 0; same formula as ``project``."""
    if spec.norm == LINF:
        return np.clip(delta, -spec.epsilon, spec.epsilon)
    flat = delta.reshape(delta.shape[0], -1)
    norms = np.sqrt((flat * flat).sum(axis=1))
    scale = np.where(norms > spec.epsilon * (1.0 + _PROJ_TOL),
                     np.divide(spec.epsilon, norms, out=np.ones_like(norms), where=norms > 0),
                     1.0)
    return (flat * scale[:, None]).reshape(delta.shape)


def _random_start(shape, spec: AttackSpec, rng):
    n = shape[0]
    if spec.norm == LINF:
        return rng.uniform(-spec.epsilon, spec.epsilon, size=shape)
    raw = rng.normal(size=shape).reshape(n, -1)
    norms = np.sqrt((raw * raw).sum(axis=1, keepdims=True))
    norms[norms == 0] = 1.0
    radii = spec.epsilon * rng.uniform(0, 1, size=(n, 1)) ** (1.0 / raw.shape[1])
    return (raw / norms * radii).reshape(shape)


def pgd_attack(model, x, y, spec: AttackSpec, *, bn_batch_stats: bool = False,
               rng=None, diagnostics: AttackDiagnostics | None = None) -> np.ndarray:
    """Iterated normalized-gradient ascent with projection onto the ball.

    ``model`` only needs a ``loss(x_tensor, y) -> scalar Tensor`` method;
    networks additionally expose ``frozen_stats`` so the attack can use
    batch statistics without moving the running estimates. Parameters and
    running statistics are never modified. Samples with a zero gradient
    skip that step (recorded in ``diagnostics``).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if spec.epsilon == 0.0 or spec.steps == 0:
        return x.copy()

    if spec.random_start:
        rng = rng if rng is not None else np.random.default_rng(0)
        delta = _project_rows(_random_start(x.shape, spec, rng), spec)
    else:
        delta = np.zeros_like(x)

    ctx = model.frozen_stats(bn_batch_stats) if hasattr(model, "frozen_stats") else nullcontext()
    n = x.shape[0]
    with ctx:
        for step in range(spec.steps):
            xt = T.Tensor(x + delta, requires_grad=True)
            loss = model.loss(xt, y)
            T.backward(loss)
            g = xt.grad.reshape(n, -1)
            if spec.norm == LINF:
                direction = np.sign(g)
                dead = ~np.any(g != 0.0, axis=1)
            else:
                norms = np.sqrt((g * g).sum(axis=1))
                dead = norms == 0.0
                direction = g / np.where(dead, 1.0, norms)[:, None]
            if dead.any():
                direction[dead] = 0.0
                if diagnostics is not None:
                    diagnostics.zero_grad_skips.extend((step, int(i)) for i in np.nonzero(dead)[0])
            delta = delta + spec.step_size * direction.reshape(x.shape)
            delta = _project_rows(delta, spec)
            if spec.clip_input:
                delta = np.clip(x + delta, 0.0, 1.0) - x
    return x + delta


def robust_accuracy(model, dataset, spec: AttackSpec, *, attack=pgd_attack,
                    batch_size: int = 128, **attack_kw) -> float:
    """Fraction of samples still classified correctly after the attack.

    With epsilon 0 the attack is the identity, so this equals clean top-1
    accuracy. ``attack`` is pluggable (same signature as ``pgd_attack``)
    so stronger search procedures can be swapped in.
    """
    images, labels = dataset.images, dataset.labels
    if len(labels) == 0:
        raise ContractError("robust_accuracy: empty dataset")
    prev_mode = getattr(model, "mode", None)
    if prev_mode is not None:
        model.eval_mode()
    try:
        correct = 0
        for start in range(0, len(labels), batch_size):
            xb = images[start:start + batch_size]
            yb = labels[start:start + batch_size]
            x_adv = attack(model, xb, yb, spec, **attack_kw)
            preds = model.predict(x_adv)
            correct += int((preds == yb).sum())
        return correct / len(labels)
    finally:
        if prev_mode is not None:
            model.mode = prev_mode
