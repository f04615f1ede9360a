"""Segmentation scores and two-group cohort statistics.

Pixel-level scores (accuracy, Dice, Matthews correlation) are computed from
a confusion-count summary, optionally restricted to a region mask.  Cohort
comparisons use the unpaired Mann-Whitney U test (exact for small untied
samples, normal approximation otherwise) and Spearman rank correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import stdtr

__all__ = [
    "UndefinedMetricError",
    "ConfusionCounts",
    "CohortSample",
    "confusion",
    "accuracy",
    "dsc",
    "mcc",
    "midranks",
    "MannWhitneyResult",
    "mann_whitney_u",
    "SpearmanResult",
    "spearman_rho",
]


class UndefinedMetricError(ValueError):
    """A score's denominator is degenerate for these inputs."""


@dataclass(frozen=True)
class ConfusionCounts:
    """Pixel confusion summary; n is the evaluated pixel count."""

    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        for name in ("tp", "tn", "fp", "fn"):
            value = getattr(self, name)
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class CohortSample:
    """One group's values for a cohort comparison."""

    values: tuple[float, ...]
    label: str = ""

    def __post_init__(self) -> None:
        if len(self.values) == 0:
            raise ValueError(f"cohort sample {self.label!r} is empty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError(f"cohort sample {self.label!r} has non-finite values")


def _values(sample: "CohortSample | Sequence[float]") -> np.ndarray:
    if isinstance(sample, CohortSample):
        return np.asarray(sample.values, dtype=float)
    arr = np.asarray(sample, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("empty sample")
    if not np.all(np.isfinite(arr)):
        raise ValueError("sample has non-finite values")
    return arr


def confusion(
    pred: np.ndarray, truth: np.ndarray, region: np.ndarray | None = None
) -> ConfusionCounts:
    """Count tp/tn/fp/fn over the region (or the whole frame)."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != pred.shape:
            raise ValueError(
                f"shape mismatch: region {region.shape} vs pred {pred.shape}"
            )
        pred = pred[region]
        truth = truth[region]
    tp = int(np.count_nonzero(pred & truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def accuracy(c: ConfusionCounts) -> float:
    """(tp + tn) / n."""
    if c.n == 0:
        raise UndefinedMetricError("accuracy undefined: no evaluated pixels")
    return (c.tp + c.tn) / c.n


def dsc(c: ConfusionCounts) -> float:
    """Dice similarity coefficient 2tp / (2tp + fp + fn)."""
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        raise UndefinedMetricError(
            "dsc undefined: no foreground in prediction or truth"
        )
    return 2 * c.tp / denom


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation in normalized form.

    With S = (tp+fn)/n the truth-positive rate and P = (tp+fp)/n the
    predicted-positive rate:  (tp/n - S*P) / sqrt(P*S*(1-S)*(1-P)).
    This avoids the four-product form's intermediate overflow on large
    pixel counts; the two are algebraically identical.
    """
    n = c.n
    if n == 0:
        raise UndefinedMetricError("mcc undefined: no evaluated pixels")
    positives_truth = c.tp + c.fn
    positives_pred = c.tp + c.fp
    if positives_truth == 0:
        raise UndefinedMetricError("mcc undefined: truth has no positive pixels (S = 0)")
    if positives_truth == n:
        raise UndefinedMetricError("mcc undefined: truth has no negative pixels (S = 1)")
    if positives_pred == 0:
        raise UndefinedMetricError("mcc undefined: prediction has no positive pixels (P = 0)")
    if positives_pred == n:
        raise UndefinedMetricError("mcc undefined: prediction has no negative pixels (P = 1)")
    s = positives_truth / n
    p = positives_pred / n
    return (c.tp / n - s * p) / math.sqrt(p * s * (1.0 - s) * (1.0 - p))


def midranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties assigned the mean of their rank range."""
    arr = np.asarray(values, dtype=float).ravel()
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=float)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


class MannWhitneyResult(NamedTuple):
    """min-U statistic, two-sided p, and the per-group breakdown."""

    u: float
    p: float
    u_a: float
    u_b: float
    p_a_less: float
    p_a_greater: float
    method: str


def _exact_u_distribution(n_a: int, n_b: int) -> np.ndarray:
    """counts[u] = number of rank labelings with U_a = u (no ties)."""
    max_u = n_a * n_b
    # dp[k][u]: ways to pick k of the first i pooled ranks as group A with
    # rank-sum statistic U_a = u; ranks enter one at a time.
    dp = np.zeros((n_a + 1, max_u + 1), dtype=float)
    dp[0, 0] = 1.0
    for i in range(1, n_a + n_b + 1):
        for k in range(min(i, n_a), 0, -1):
            # choosing pooled rank i as A's k-th member adds (i - k) to U_a
            add = i - k
            if add > max_u:
                continue
            dp[k, add:] += dp[k - 1, : max_u + 1 - add]
    return dp[n_a]


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(
    a: "CohortSample | Sequence[float]", b: "CohortSample | Sequence[float]"
) -> MannWhitneyResult:
    """Unpaired two-sample Mann-Whitney U test.

    U is min(U_a, U_b) with midrank tie handling.  The two-sided p is exact
    (full labeling enumeration) when n_a + n_b <= 16 and the pooled values
    are tie-free; otherwise a normal approximation with tie correction and
    continuity correction.  One-sided p-values for group a are included.
    """
    va = _values(a)
    vb = _values(b)
    n_a, n_b = len(va), len(vb)
    pooled = np.concatenate([va, vb])
    ranks = midranks(pooled)
    r_a = float(ranks[:n_a].sum())
    u_a = r_a - n_a * (n_a + 1) / 2.0
    u_total = float(n_a * n_b)
    u_b = u_total - u_a
    u = min(u_a, u_b)

    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))

    if n_a + n_b <= 16 and not has_ties:
        counts = _exact_u_distribution(n_a, n_b)
        total = counts.sum()
        u_int = int(round(u))
        if 2 * u_int >= u_total:
            p = 1.0
        else:
            low = counts[: u_int + 1].sum()
            high = counts[int(round(u_total)) - u_int :].sum()
            p = float((low + high) / total)
        ua_int = int(round(u_a))
        p_less = float(counts[: ua_int + 1].sum() / total)
        p_greater = float(counts[ua_int:].sum() / total)
        method = "exact"
    else:
        n = n_a + n_b
        mu = u_total / 2.0
        tie_term = float(((tie_counts**3 - tie_counts).sum()) / (n * (n - 1))) if n > 1 else 0.0
        var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
        if var <= 0:
            # all pooled values identical: no evidence of any difference
            p = 1.0
            p_less = p_greater = 1.0
        else:
            sigma = math.sqrt(var)
            z = max(0.0, abs(u - mu) - 0.5) / sigma
            p = min(1.0, 2.0 * _normal_sf(z))
            z_less = (u_a - mu + 0.5) / sigma
            z_greater = (u_a - mu - 0.5) / sigma
            p_less = min(1.0, 1.0 - _normal_sf(z_less))
            p_greater = min(1.0, _normal_sf(z_greater))
        method = "normal"
    return MannWhitneyResult(
        u=float(u),
        p=float(p),
        u_a=float(u_a),
        u_b=float(u_b),
        p_a_less=float(p_less),
        p_a_greater=float(p_greater),
        method=method,
    )


class SpearmanResult(NamedTuple):
    rho: float
    p: float


def spearman_rho(
    a: "CohortSample | Sequence[float]", b: "CohortSample | Sequence[float]"
) -> SpearmanResult:
    """Spearman rank correlation: Pearson correlation of midranks.

    p-value from the t approximation with n - 2 degrees of freedom.
    Requires equal lengths of at least 3 and non-constant inputs.
    """
    va = _values(a)
    vb = _values(b)
    if len(va) != len(vb):
        raise ValueError(f"length mismatch: {len(va)} vs {len(vb)}")
    n = len(va)
    if n < 3:
        raise ValueError(f"need at least 3 paired values, got {n}")
    ra = midranks(va)
    rb = midranks(vb)
    da = ra - ra.mean()
    db = rb - rb.mean()
    denom = math.sqrt(float((da * da).sum()) * float((db * db).sum()))
    if denom == 0.0:
        raise UndefinedMetricError("spearman undefined: an input is constant")
    rho = float((da * db).sum() / denom)
    rho = min(1.0, max(-1.0, rho))
    if abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p = 2.0 * float(stdtr(n - 2, -abs(t)))
    return SpearmanResult(rho=rho, p=min(1.0, p))
