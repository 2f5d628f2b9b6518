"""Accuracy metrics and the comparison apparatus for experiment tables.

Welch's unequal-variance t-test drives the table bolding rule: the
higher-mean entry is bolded alone when the two-tailed test is significant
at 95%, otherwise both entries are bolded. The accuracy-transfer fit is
summarized by the squared Pearson correlation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ContractError


def top1(preds, labels) -> float:
    """Fraction of exact prediction matches."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1 or preds.size == 0:
        raise ContractError(f"top1: need equal nonempty 1-D arrays, got {preds.shape} vs {labels.shape}")
    return float((preds == labels).mean())


def mean_per_class(preds, labels, class_count: int) -> float:
    """Unweighted mean of per-class accuracies; every class must appear."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1 or preds.size == 0:
        raise ContractError(f"mean_per_class: need equal nonempty 1-D arrays, got {preds.shape} vs {labels.shape}")
    accs = []
    for c in range(class_count):
        mask = labels == c
        if not mask.any():
            raise ContractError(f"mean_per_class: class {c} absent from labels")
        accs.append(float((preds[mask] == c).mean()))
    return float(np.mean(accs))


@dataclass(frozen=True)
class TrialSet:
    """Accuracy observations for one (model, eps, mode, dataset) cell."""

    label: str
    observations: tuple

    def __post_init__(self):
        obs = tuple(float(v) for v in self.observations)
        if len(obs) < 1:
            raise ContractError(f"trial set {self.label!r} needs at least one observation")
        if any(not 0.0 <= v <= 1.0 for v in obs):
            raise ContractError(f"trial set {self.label!r} has accuracies outside [0,1]")
        object.__setattr__(self, "observations", obs)

    @property
    def mean(self) -> float:
        return float(np.mean(self.observations))

    @property
    def std(self):
        """Bessel-corrected sample standard deviation; absent for n == 1."""
        if len(self.observations) < 2:
            return None
        return float(np.std(self.observations, ddof=1))


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float
    significant_at_95: bool


def _student_t_two_tailed(t: float, df: float) -> float:
    # survival of |t| via the regularized incomplete beta function
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return float(special.betainc(df / 2.0, 0.5, x))


def welch_t_test(a: TrialSet, b: TrialSet) -> WelchResult:
    """Two-tailed unequal-variance t-test with Welch-Satterthwaite df.

    Needs at least two observations per side. When both variances are
    zero: equal means give p = 1 by convention, unequal means give
    t = +-inf and p = 0.
    """
    na, nb = len(a.observations), len(b.observations)
    if na < 2 or nb < 2:
        raise ContractError("welch_t_test: each trial set needs at least two observations")
    xa = np.asarray(a.observations)
    xb = np.asarray(b.observations)
    va = float(xa.var(ddof=1))
    vb = float(xb.var(ddof=1))
    diff = float(xa.mean() - xb.mean())
    sa, sb = va / na, vb / nb
    se = math.sqrt(sa + sb)
    if se == 0.0:
        if diff == 0.0:
            return WelchResult(t=0.0, df=float(na + nb - 2), p=1.0, significant_at_95=False)
        t = math.copysign(math.inf, diff)
        return WelchResult(t=t, df=float(na + nb - 2), p=0.0, significant_at_95=True)
    t = diff / se
    df = (sa + sb) ** 2 / (sa ** 2 / (na - 1) + sb ** 2 / (nb - 1))
    p = _student_t_two_tailed(t, df)
    return WelchResult(t=t, df=df, p=p, significant_at_95=p < 0.05)


class Bolding(enum.Enum):
    BOLD_A = "BoldA"
    BOLD_B = "BoldB"
    BOLD_BOTH = "BoldBoth"


def bolding_rule(a: TrialSet, b: TrialSet) -> Bolding:
    """Bold the higher mean when the test is conclusive, else bold both."""
    result = welch_t_test(a, b)
    if not result.significant_at_95:
        return Bolding.BOLD_BOTH
    return Bolding.BOLD_A if a.mean > b.mean else Bolding.BOLD_B


def r_squared(x, y) -> float:
    """Squared Pearson correlation (the R^2 of the least-squares line)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError(f"r_squared: need equal 1-D arrays, got {x.shape} vs {y.shape}")
    if x.size < 3:
        raise ContractError(f"r_squared: need at least 3 points, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0:
        raise ContractError("r_squared: x is constant")
    if vy == 0.0:
        raise ContractError("r_squared: y is constant")
    cov = float(dx @ dy)
    return cov * cov / (vx * vy)


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float | None


def aggregate(trials: TrialSet) -> Aggregate:
    """Mean and Bessel-corrected std; std is absent for a single trial."""
    return Aggregate(mean=trials.mean, std=trials.std)
