import csv

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import beta
from sklearn.metrics import average_precision_score, matthews_corrcoef, roc_auc_score

from agonistlab.core import GroupEffect
from agonistlab.stats import (ConfusionCounts, FeatureFilter, FilterThresholds, UndefinedScoreError,
                              average_precision, binom_cdf, cp_lower, cp_upper, feature_scores,
                              filter_features, group_ucb, mcc, mcc_score, measured_effect, rank_auc,
                              score_and_filter, write_score_table)


def mp_tail(x, n, p):
    return mpmath.fsum(mpmath.binomial(n, k) * mpmath.mpf(p) ** k * (1 - mpmath.mpf(p)) ** (n - k)
                       for k in range(x + 1))


def mp_upper(x, n, level):
    mpmath.mp.dps = 40
    return float(mpmath.findroot(lambda p: mp_tail(x, n, p) - level, (mpmath.mpf(0), mpmath.mpf(1)),
                                 solver="bisect", tol=1e-30))


def test_cp_upper_closed_form_zero():
    assert cp_upper(0, 64, 0.025) == pytest.approx(1 - 0.025 ** (1 / 64), abs=1e-12)
    assert cp_upper(0, 64, 0.025) == pytest.approx(0.0560, abs=5e-5)


def test_cp_upper_boundaries_and_errors():
    assert cp_upper(64, 64, 0.025) == 1.0
    assert cp_lower(0, 64, 0.025) == 0.0
    for bad in [(5, 4, 0.05), (-1, 4, 0.05), (1, 4, 0.0), (1, 4, 1.0), (0, 0, 0.05)]:
        with pytest.raises(ValueError):
            cp_upper(*bad)


def test_cp_upper_midpoint_matches_mpmath():
    assert cp_upper(32, 64, 0.025) == pytest.approx(mp_upper(32, 64, 0.025), abs=1e-9)


@pytest.mark.parametrize("n", [1, 2, 7, 20, 64])
def test_cp_upper_matches_beta_quantile(n):
    for x in range(n):
        for level in (0.025, 0.05, 0.2):
            assert cp_upper(x, n, level) == pytest.approx(beta.ppf(1 - level, x + 1, n - x), abs=1e-9)
            if x > 0:
                assert cp_lower(x, n, level) == pytest.approx(beta.ppf(level, x, n - x + 1), abs=1e-9)


@settings(max_examples=200)
@given(st.integers(1, 64).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))),
       st.floats(0.001, 0.5))
def test_cp_upper_properties(xn, level):
    x, n = xn
    u = cp_upper(x, n, level)
    assert u >= x / n - 1e-12
    if x < n:
        assert cp_upper(x + 1, n, level) >= u - 1e-12
        assert abs(binom_cdf(x, n, u) - level) < 1e-9
    assert cp_upper(x, n, level / 2) >= u - 1e-12


def test_group_ucb_examples():
    e = measured_effect(0, 64, 0, 64, 0.05)
    assert group_ucb(e, 0.05) == pytest.approx(0.0560, abs=5e-5)
    assert measured_effect(64, 64, 0, 64, 0.05).ucb == 1.0
    e = measured_effect(13, 64, 5, 64, 0.05)
    assert e.ucb == pytest.approx(max(mp_upper(13, 64, 0.025), mp_upper(5, 64, 0.025)), abs=1e-9)
    assert e.ucb >= e.strength
    with pytest.raises(ValueError):
        group_ucb(GroupEffect(0.0, 0.0, 0, 64), 0.05)


def test_mcc_examples():
    assert mcc(ConfusionCounts(tp=5, tn=5, fp=0, fn=0)) == 1.0
    c = ConfusionCounts(tp=50, tn=40, fp=10, fn=0)
    assert mcc(c) == pytest.approx(2000 / np.sqrt(6.0e6))
    y = [1] * 50 + [0] * 40 + [0] * 10
    p = [1] * 50 + [0] * 40 + [1] * 10
    assert mcc(c) == pytest.approx(np.corrcoef(y, p)[0, 1])
    assert mcc(ConfusionCounts(tp=3, tn=0, fp=2, fn=0)) == 0.0
    with pytest.raises(ValueError):
        mcc(ConfusionCounts(0, 0, 0, 0))


def test_mcc_permutation_mean_near_zero(rng):
    y = rng.random(200) < 0.4
    p = rng.random(200) < 0.5
    vals = [mcc_score(y, rng.permutation(p)) for _ in range(1000)]
    assert abs(np.mean(vals)) < 0.02


@given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 30), st.integers(0, 30))
def test_mcc_symmetries(tp, tn, fp, fn):
    if tp + tn + fp + fn == 0:
        return
    c = ConfusionCounts(tp, tn, fp, fn)
    assert mcc(ConfusionCounts(tn, tp, fn, fp)) == pytest.approx(mcc(c))
    # inverting predictions: tp<->fn, tn<->fp
    assert mcc(ConfusionCounts(fn, fp, tn, tp)) == pytest.approx(-mcc(c))


def test_mcc_matches_sklearn(rng):
    for _ in range(50):
        y = rng.random(40) < 0.5
        p = rng.random(40) < 0.5
        assert mcc_score(y, p) == pytest.approx(matthews_corrcoef(y, p))


def test_feature_scores_examples():
    s = feature_scores([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert s.auc == pytest.approx(0.75)
    s = feature_scores([0, 1, 0, 1], [0, 1, 0, 1])
    assert s.auc == 1.0
    s = feature_scores([3, 3, 3, 3], [0, 1, 0, 1])
    assert s.auc == 0.5 and s.std_gap == 0.0
    with pytest.raises(UndefinedScoreError):
        feature_scores([1, 2, 3], [1, 1, 1])


def _pair_auc(x, y):
    pos = [a for a, t in zip(x, y) if t]
    neg = [a for a, t in zip(x, y) if not t]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))


@given(st.lists(st.tuples(st.integers(0, 4), st.booleans()), min_size=2, max_size=12))
def test_rank_auc_equals_pair_counting(data):
    x = [a for a, _ in data]
    y = [b for _, b in data]
    if all(y) or not any(y):
        return
    assert rank_auc(x, y) == pytest.approx(_pair_auc(x, y))
    s = feature_scores(x, y)
    assert s.auc_sym == pytest.approx(max(s.auc, 1 - s.auc))


def test_auc_ap_match_sklearn(rng):
    for _ in range(30):
        x = rng.integers(0, 6, 40).astype(float)
        y = rng.random(40) < 0.4
        if y.all() or not y.any():
            continue
        assert rank_auc(x, y) == pytest.approx(roc_auc_score(y, x))
        assert average_precision(x, y) == pytest.approx(average_precision_score(y, x))
        s = feature_scores(x, y)
        assert s.ap_above_base == pytest.approx(average_precision_score(y, x) - y.mean())
        g = (x[y].mean() - x[~y].mean()) / (np.sqrt(0.5 * (x[y].var() + x[~y].var())) + 1e-12)
        assert s.std_gap == pytest.approx(g)


def test_filter_duplicates_and_low_signal(rng):
    y = rng.random(300) < 0.5
    good = y + 0.1 * rng.standard_normal(300)
    X = np.column_stack([good, good, rng.standard_normal(300)])
    scores, kept, reasons = score_and_filter(X, y, FilterThresholds())
    assert kept == [0]
    assert reasons[1] == "duplicate_of:0"
    assert reasons[2] == "low_signal"


def test_filter_three_informative(rng):
    n = 400
    y = rng.random(n) < 0.5
    cols = [y * 3.0 + rng.standard_normal(n) * 0.5 for _ in range(3)]
    cols += [rng.standard_normal(n) for _ in range(7)]
    X = np.column_stack(cols)
    th = FilterThresholds(min_auc=0.8)
    scores, kept, _ = score_and_filter(X, y, th)
    expect = [i for i, s in enumerate(scores) if s.auc_sym >= 0.8 or abs(s.std_gap) >= th.min_delta
              or s.ap_above_base >= th.min_ap_above_base]
    assert {0, 1, 2} <= set(kept)
    assert kept == expect
    assert all(scores[i].auc_sym >= 0.9 for i in range(3))


def test_filter_mad_outlier(rng):
    y = rng.random(200) < 0.5
    base = [y + 0.3 * rng.standard_normal(200) for _ in range(4)]
    X = np.column_stack(base + [100 * (y + 0.3 * rng.standard_normal(200))])
    _, kept, reasons = score_and_filter(X, y, FilterThresholds(max_correlation=None, mad_z=3.5))
    assert 4 not in kept and reasons[4] == "mad_outlier"


def test_feature_filter_estimator_and_csv(tmp_path, rng):
    y = rng.random(4000) < 0.5
    X = np.column_stack([y + 0.1 * rng.standard_normal(4000), rng.standard_normal(4000)])
    f = FeatureFilter().fit(X, y)
    assert f.get_support().tolist() == [True, False]
    assert f.transform(X).shape == (4000, 1)
    assert f.get_params()["min_auc"] == 0.6
    path = tmp_path / "scores.csv"
    f.write_csv(path, ["a", "b"])
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["feature_id", "auc", "auc_sym", "ap_above_base", "std_gap", "retained", "drop_reason"]
    assert rows[1]["drop_reason"] == "low_signal"
    assert filter_features(X, y, FilterThresholds()) == [0]
