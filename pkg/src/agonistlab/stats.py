"""Exact binomial bounds, feature scoring and filtering, and MCC."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import GroupEffect

_BISECT_ITERS = 200


class UndefinedScoreError(ValueError):
    pass


def _log_pmf_terms(n: int, p: float, lo: int, hi: int) -> list[float]:
    lp, lq = math.log(p), math.log1p(-p)
    return [
        math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) + i * lp + (n - i) * lq
        for i in range(lo, hi + 1)
    ]


def _logsumexp(values: list[float]) -> float:
    top = max(values)
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def binom_cdf(x: int, n: int, p: float) -> float:
    """P[X <= x] for X ~ Binomial(n, p) by exact term summation."""
    if x < 0:
        return 0.0
    if x >= n:
        return 1.0
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0
    # sum the shorter tail for accuracy
    if x < n / 2:
        return min(1.0, math.exp(_logsumexp(_log_pmf_terms(n, p, 0, x))))
    return max(0.0, 1.0 - math.exp(_logsumexp(_log_pmf_terms(n, p, x + 1, n))))


def _upper_tail(x: int, n: int, p: float) -> float:
    if x <= 0:
        return 1.0
    if x > n:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    return min(1.0, math.exp(_logsumexp(_log_pmf_terms(n, p, x, n))))


def _check_args(x: int, n: int, level: float) -> None:
    if n <= 0:
        raise ValueError(f"trials must be positive, got {n}")
    if not 0 <= x <= n:
        raise ValueError(f"successes {x} outside [0, {n}]")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level {level} outside (0, 1)")


@lru_cache(maxsize=65536)
def cp_upper(x: int, n: int, level: float) -> float:
    """One-sided Clopper-Pearson upper bound.

    Smallest p with P[X <= x; n, p] <= level, found by bisection on the exact
    lower tail. ``cp_upper(n, n, .) == 1``.
    """
    _check_args(x, n, level)
    if x == n:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if binom_cdf(x, n, mid) <= level:
            hi = mid
        else:
            lo = mid
    return hi


@lru_cache(maxsize=65536)
def cp_lower(x: int, n: int, level: float) -> float:
    """One-sided Clopper-Pearson lower bound (largest p with P[X >= x] <= level)."""
    _check_args(x, n, level)
    if x == 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _upper_tail(x, n, mid) <= level:
            lo = mid
        else:
            hi = mid
    return lo


def group_ucb(effect: GroupEffect, alpha: float) -> float:
    """Upper bound on strength: per-slice bounds at alpha/2, combined by max."""
    if effect.n_plus <= 0 or effect.n_minus <= 0:
        raise ValueError("group_ucb needs samples on both slices")
    return max(
        cp_upper(effect.x_plus, effect.n_plus, alpha / 2),
        cp_upper(effect.x_minus, effect.n_minus, alpha / 2),
    )


def measured_effect(x_plus: int, n_plus: int, x_minus: int, n_minus: int, alpha: float) -> GroupEffect:
    """GroupEffect from flip counts, with per-slice bounds at alpha/2."""
    return GroupEffect(
        delta_plus=x_plus / n_plus,
        delta_minus=x_minus / n_minus,
        n_plus=n_plus,
        n_minus=n_minus,
        ucb_plus=cp_upper(x_plus, n_plus, alpha / 2),
        ucb_minus=cp_upper(x_minus, n_minus, alpha / 2),
    )


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        t = np.asarray(y_true, dtype=bool)
        p = np.asarray(y_pred, dtype=bool)
        return cls(
            tp=int(np.sum(t & p)), tn=int(np.sum(~t & ~p)),
            fp=int(np.sum(~t & p)), fn=int(np.sum(t & ~p)),
        )

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; any zero marginal gives 0."""
    if c.total <= 0:
        raise ValueError("MCC of an empty confusion matrix")
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)


def mcc_score(y_true, y_pred) -> float:
    return mcc(ConfusionCounts.from_predictions(y_true, y_pred))


@dataclass(frozen=True)
class FeatureScore:
    auc: float
    auc_sym: float
    ap_above_base: float
    std_gap: float


def midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=float)
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_auc(column, labels) -> float:
    z = np.asarray(column, dtype=float)
    y = np.asarray(labels, dtype=bool)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedScoreError("AUC needs both classes")
    r = midranks(z)
    return (r[y].sum() - n1 * (n1 + 1) / 2) / (n1 * n0)


def average_precision(column, labels) -> float:
    """Step-wise average precision, thresholds grouped at tied scores."""
    z = np.asarray(column, dtype=float)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedScoreError("AP needs a positive example")
    order = np.argsort(-z, kind="mergesort")
    z_sorted, y_sorted = z[order], y[order]
    tps = np.cumsum(y_sorted)
    # keep the last index of each run of tied scores
    last = np.r_[np.nonzero(np.diff(z_sorted))[0], len(z_sorted) - 1]
    tp = tps[last].astype(float)
    precision = tp / (last + 1)
    recall = tp / n_pos
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def feature_scores(column, labels, eps: float = 1e-12) -> FeatureScore:
    z = np.asarray(column, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if z.shape != y.shape or z.ndim != 1 or len(z) < 2:
        raise ValueError("column and labels must be equal-length vectors of length >= 2")
    if y.all() or not y.any():
        raise UndefinedScoreError("feature scores need both classes")
    auc = rank_auc(z, y)
    ap_above = average_precision(z, y) - y.mean()
    z1, z0 = z[y], z[~y]
    sigma = math.sqrt(0.5 * (z1.var() + z0.var())) + eps
    std_gap = (z1.mean() - z0.mean()) / sigma
    return FeatureScore(float(auc), float(max(auc, 1 - auc)), float(ap_above), float(std_gap))


@dataclass(frozen=True)
class FilterThresholds:
    min_auc: float = 0.6
    min_delta: float = 0.3
    min_ap_above_base: float = 0.1
    max_correlation: float | None = 0.95
    mad_z: float | None = None


def _abs_corr(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return 1.0 if sa == sb == 0 and np.array_equal(a, b) else 0.0
    return float(abs(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb)))


def _robust_z(values: np.ndarray) -> np.ndarray:
    med = np.median(values)
    mad = np.median(np.abs(values - med))
    if mad > 0:
        return 0.6745 * (values - med) / mad
    meanad = np.mean(np.abs(values - med))
    if meanad > 0:
        return (values - med) / (1.2533 * meanad)
    return np.zeros_like(values)


def score_and_filter(matrix, labels, thresholds: FilterThresholds):
    """Score every column and apply the three-stage filter.

    Stages run in a fixed order: score tests, then near-duplicate removal,
    then MAD outlier removal. Returns (scores, retained ids, drop reasons).
    """
    X = np.asarray(matrix, dtype=float)
    y = np.asarray(labels, dtype=bool)
    n_cols = X.shape[1]
    scores = [feature_scores(X[:, i], y) for i in range(n_cols)]
    reasons: dict[int, str] = {}
    passing = []
    for i, s in enumerate(scores):
        if (
            s.auc_sym >= thresholds.min_auc
            or abs(s.std_gap) >= thresholds.min_delta
            or s.ap_above_base >= thresholds.min_ap_above_base
        ):
            passing.append(i)
        else:
            reasons[i] = "low_signal"
    kept: list[int] = []
    for i in passing:
        if thresholds.max_correlation is not None:
            dup = next(
                (k for k in kept if _abs_corr(X[:, i], X[:, k]) >= thresholds.max_correlation),
                None,
            )
            if dup is not None:
                reasons[i] = f"duplicate_of:{dup}"
                continue
        kept.append(i)
    if thresholds.mad_z is not None and len(kept) >= 3:
        z = _robust_z(np.array([X[:, i].std() for i in kept]))
        survivors = []
        for i, zi in zip(kept, z):
            if zi > thresholds.mad_z:
                reasons[i] = "mad_outlier"
            else:
                survivors.append(i)
        kept = survivors
    return scores, kept, reasons


def filter_features(matrix, labels, thresholds: FilterThresholds) -> list[int]:
    return score_and_filter(matrix, labels, thresholds)[1]


class FeatureFilter(SelectorMixin, BaseEstimator):
    """Keeps predicate columns that pass any score test, minus duplicates and outliers."""

    def __init__(self, min_auc=0.6, min_delta=0.3, min_ap_above_base=0.1,
                 max_correlation=0.95, mad_z=None):
        self.min_auc = min_auc
        self.min_delta = min_delta
        self.min_ap_above_base = min_ap_above_base
        self.max_correlation = max_correlation
        self.mad_z = mad_z

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        thresholds = FilterThresholds(
            self.min_auc, self.min_delta, self.min_ap_above_base,
            self.max_correlation, self.mad_z,
        )
        self.scores_, retained, self.drop_reasons_ = score_and_filter(X, y, thresholds)
        self.n_features_in_ = X.shape[1]
        self.support_ = np.zeros(X.shape[1], dtype=bool)
        self.support_[retained] = True
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_

    def write_csv(self, path, feature_names: Sequence[str] | None = None) -> None:
        check_is_fitted(self, "support_")
        names = feature_names or [str(i) for i in range(self.n_features_in_)]
        write_score_table(path, names, self.scores_, self.support_, self.drop_reasons_)


def write_score_table(path, names, scores, support, reasons) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_id", "auc", "auc_sym", "ap_above_base", "std_gap", "retained", "drop_reason"])
        for i, (name, s) in enumerate(zip(names, scores)):
            w.writerow([
                name, f"{s.auc:.6f}", f"{s.auc_sym:.6f}", f"{s.ap_above_base:.6f}",
                f"{s.std_gap:.6f}", int(bool(support[i])), reasons.get(i, ""),
            ])
