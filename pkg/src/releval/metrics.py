"""Classification and ranking metrics, and the paired t-test behind launch verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

PLUS, EQUAL, MINUS = "+", "=", "-"
VERDICTS = (PLUS, EQUAL, MINUS)


# -- classification -------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix3:
    """3x3 counts; rows are gold labels, columns predicted labels."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (3, 3):
            raise InputError(f"confusion matrix must be 3x3, got shape {counts.shape}")
        if (counts < 0).any():
            raise InputError("confusion matrix entries must be non-negative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, gold: Iterable[int], pred: Iterable[int]) -> "ConfusionMatrix3":
        counts = np.zeros((3, 3), dtype=np.int64)
        gold, pred = list(gold), list(pred)
        if len(gold) != len(pred):
            raise InputError("gold and predicted label lists differ in length")
        for g, p in zip(gold, pred):
            counts[g, p] += 1
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class F1Report:
    per_class: tuple[float, float, float]
    micro: float


def f1_scores(cm: ConfusionMatrix3) -> F1Report:
    """One-vs-rest f1 per class (0/0 -> 0) and micro f1.

    With exactly one gold and one predicted label per pair, micro f1 reduces
    to trace/total.
    """
    c = cm.counts
    total = int(c.sum())
    if total == 0:
        raise InputError("f1 of an empty confusion matrix")
    per_class = []
    for k in range(3):
        tp = int(c[k, k])
        fp = int(c[:, k].sum()) - tp
        fn = int(c[k, :].sum()) - tp
        denom = 2 * tp + fp + fn
        per_class.append(2 * tp / denom if denom else 0.0)
    return F1Report(tuple(per_class), int(np.trace(c)) / total)


# -- ranking --------------------------------------------------------------

def dcg_at_k(labels: Sequence[int], k: int) -> float:
    """sum_{i=1..min(k,n)} (2^rel_i - 1) / log2(i + 1)."""
    if k < 1:
        raise InputError("k must be >= 1")
    return sum((2.0 ** rel - 1.0) / math.log2(i + 2) for i, rel in enumerate(labels[:k]))


def ndcg_at_k(labels: Sequence[int], k: int) -> float:
    """DCG@k normalised by the DCG@k of the same labels sorted best-first.

    The ideal comes from the list itself; an all-zero list scores 0.
    """
    ideal = dcg_at_k(sorted(labels, reverse=True), k)
    if ideal == 0.0:
        return 0.0
    return dcg_at_k(labels, k) / ideal


# -- Student t ------------------------------------------------------------

def _betacf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 10_000) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for T ~ Student t(df)."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    # I_x(df/2, 1/2) is the two-sided tail directly
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, x)))


def student_t_cdf(t: float, df: float) -> float:
    tail = 0.5 * student_t_sf2(t, df)
    return 1.0 - tail if t >= 0 else tail


# -- paired test ----------------------------------------------------------

@dataclass(frozen=True)
class TestResult:
    t_statistic: float
    p_value: float
    mean_diff: float
    n: int
    sd: float = 0.0
    degenerate: bool = False

    __test__ = False  # not a pytest class


def paired_t_test(diffs: Sequence[float]) -> TestResult:
    """Two-sided one-sample t-test on paired differences (H0: mean = 0).

    Zero spread is handled explicitly: all-zero diffs give t=0, p=1; a constant
    non-zero diff gives t=+-inf, p=0 and ``degenerate=True``.
    """
    d = np.asarray(diffs, dtype=float)
    n = int(d.size)
    if n < 2:
        raise InputError(f"paired t-test needs at least 2 differences, got {n}")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    # guard against round-off spread from a constant vector
    if sd <= 1e-15 * max(1.0, abs(mean)):
        if mean == 0.0:
            return TestResult(0.0, 1.0, 0.0, n, 0.0, False)
        return TestResult(math.copysign(math.inf, mean), 0.0, mean, n, 0.0, True)
    t = mean / (sd / math.sqrt(n))
    return TestResult(t, student_t_sf2(t, n - 1), mean, n, sd, False)


def verdict(result: TestResult, alpha: float = 0.05) -> str:
    """'+' / '-' when significant (p < alpha) in that direction, '=' otherwise."""
    if result.p_value < alpha:
        if result.mean_diff > 0:
            return PLUS
        if result.mean_diff < 0:
            return MINUS
    return EQUAL


def mirror(symbol: str) -> str:
    return {PLUS: MINUS, MINUS: PLUS, EQUAL: EQUAL}[symbol]
