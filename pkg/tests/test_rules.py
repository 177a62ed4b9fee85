import itertools

import numpy as np
import pytest
from scipy.stats import chi2_contingency
from sklearn.metrics import matthews_corrcoef

from agonistlab.core import BaselineRegime, NeuronCoord, SliceTag
from agonistlab.rules import (ClausePool, ExtractionError, GateIneligibleError, Literal, PredicateMatrix,
                              RegimeEmptyError, RuleClause, RuleSet, RuleSetClassifier, RuleSyntaxError,
                              _mcc_rows, anchor_rule, assign_splits, enumerate_clauses, extract_splitters,
                              fake_rule_control, flip_targets, gate_policy, gated_outcomes, greedy_or_compose,
                              greedy_or_compose_indices, induce_split, parse_rule)
from agonistlab.oracle import SyntheticTask
from conftest import small_task


def matrix(cols: dict, split=None, observable=None):
    names = tuple(cols)
    X = np.column_stack([np.asarray(v, float) for v in cols.values()])
    kinds = tuple("bool" if np.isin(X[:, i], (0, 1)).all() else "real" for i in range(X.shape[1]))
    obs = observable or (True,) * len(names)
    return PredicateMatrix(names, X, kinds, ("seed",) * len(names), obs, np.arange(len(X)), split)


def test_pool_single_perfect_column():
    y = np.array([0, 1, 1, 0, 1, 0])
    pool = enumerate_clauses(matrix({"a": y, "b": [1, 1, 0, 0, 1, 0]}), y)
    assert pool.train_mcc.max() == pytest.approx(1.0)
    best = pool.clauses[int(np.argmax(pool.train_mcc))]
    assert best.to_text() == "(a)"


def test_pool_threshold_recovery():
    col = np.arange(10.0)
    y = (col >= 5).astype(int)
    pool = enumerate_clauses(matrix({"r": col}), y)
    assert pool.train_mcc.max() == pytest.approx(1.0)


def test_pool_conjunction_exhaustive():
    rows = np.array(list(itertools.product([0, 1], repeat=3)))  # 8 examples
    y = rows[:, 0] & rows[:, 1]
    pool = enumerate_clauses(matrix({"c1": rows[:, 0], "c2": rows[:, 1], "c3": rows[:, 2]}), y, beam_width=2)
    perfect = [c for c, s in zip(pool.clauses, pool.train_mcc) if s > 1 - 1e-12]
    assert any(c.depth == 2 for c in perfect)
    # dedup: every pair of pool clauses fires on distinct rows
    sigs = {np.packbits(f).tobytes() for f in pool.fired}
    assert len(sigs) == len(pool)


def test_pool_errors():
    with pytest.raises(ExtractionError):
        enumerate_clauses(matrix({"a": [0, 1, 0]}), [1, 1, 1])


def test_mcc_rows_matches_sklearn(rng):
    y = rng.random(50) < 0.4
    fired = rng.random((20, 50)) < 0.5
    got = _mcc_rows(fired, y)
    for f, g in zip(fired, got):
        assert g == pytest.approx(matthews_corrcoef(y, f))


def test_or_composition_recovers_union():
    rows = np.array(list(itertools.product([0, 1], repeat=3)) * 3)
    y = rows[:, 0] | rows[:, 1]
    m = matrix({"c1": rows[:, 0], "c2": rows[:, 1], "c3": rows[:, 2]})
    pool = enumerate_clauses(m, y, max_depth=1)
    rule = greedy_or_compose(pool, y, m)
    assert rule.mcc["train"] == pytest.approx(1.0)
    assert (rule.fires(m) == y.astype(bool)).all()


def dummy_pool(fired, train_y):
    clauses = [RuleClause((Literal(f"c{i}", "=", True),)) for i in range(len(fired))]
    return ClausePool(clauses, fired, _mcc_rows(fired, train_y))


def test_greedy_steps_strictly_increase(rng):
    for _ in range(30):
        fired = rng.random((12, 80)) < 0.25
        y = fired[0] | fired[3] | (rng.random(80) < 0.1)
        comp = greedy_or_compose_indices(dummy_pool(fired, y), y, np.ones(80, bool), seed_k=12)
        assert all(b > a for a, b in zip(comp.trace, comp.trace[1:]))
        single = _mcc_rows(fired, y).max()
        assert comp.trace[-1] >= single - 1e-12


def test_greedy_near_exhaustive_best():
    rng = np.random.default_rng(123)
    hits, deficits = 0, []
    trials = 100
    for _ in range(trials):
        n = 120
        fired = rng.random((10, n)) < rng.uniform(0.05, 0.3)
        truth = rng.choice(10, rng.integers(1, 4), replace=False)
        y = fired[truth].any(axis=0) ^ (rng.random(n) < 0.08)
        val = np.zeros(n, bool)
        val[n // 2:] = True
        pool = dummy_pool(fired, y)
        comp = greedy_or_compose_indices(pool, y, val, seed_k=10)
        best = max(
            _mcc_rows(fired[list(s)].any(axis=0)[None, val], y[val])[0]
            for r in range(1, 11) for s in itertools.combinations(range(10), r)
        )
        if comp.trace[-1] >= best - 0.05:
            hits += 1
        else:
            deficits.append(best - comp.trace[-1])
    assert hits / trials >= 0.9, deficits


def test_parse_round_trip():
    text = "IF (col >= 3.5 AND flag_a) OR (NOT col2) OR (x <= -1.25) THEN fire"
    rule = parse_rule(text)
    assert rule.to_text() == text
    assert parse_rule("IF (col2 = true) THEN fire").to_text() == "IF (col2) THEN fire"
    again = RuleSet.from_json(rule.to_json())
    assert again.to_text() == text and again == rule
    assert parse_rule("IF false THEN fire").clauses == ()
    with pytest.raises(RuleSyntaxError):
        parse_rule("col >= 1")
    with pytest.raises(RuleSyntaxError):
        parse_rule("IF (col >= abc) THEN fire")


def test_rule_evaluation_is_pure(rng):
    X = rng.random((40, 3))
    m = matrix({"a": X[:, 0], "b": X[:, 1], "c": X[:, 2]})
    rule = parse_rule("IF (a >= 0.5 AND b <= 0.3) OR (c >= 0.9) THEN fire")
    full = rule.fires(m)
    perm = rng.permutation(40)
    assert (rule.fires(m.subset(perm)) == full[perm]).all()


def test_induce_split():
    X = np.array([[1], [0], [1], [1], [0], [0]])
    m = matrix({"a": X[:, 0]})
    base = np.array([1, 1, 1, 0, 0, 1])
    rule = parse_rule("IF (a) THEN fire")
    plus, minus = induce_split(rule, m, base, BaselineRegime.POSITIVE)
    assert plus == [0, 2] and minus == [1, 5]
    always = parse_rule("IF (a) OR (NOT a) THEN fire")
    assert induce_split(always, m, base, 0)[1] == []
    with pytest.raises(RegimeEmptyError):
        induce_split(rule, m, np.ones(6), BaselineRegime.NEGATIVE)


def test_fake_control_properties():
    y = np.array([1] * 30 + [0] * 70)
    f = fake_rule_control(y, 3)
    assert f.sum() == 30 and (f == fake_rule_control(y, 3)).all()
    assert not (f == y).all()


def test_fake_split_independent_of_flip_sets():
    ps = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        flips = rng.random(200) < 0.3
        fake = fake_rule_control(flips.astype(int), seed + 1000).astype(bool)
        table = np.array([[np.sum(fake & flips), np.sum(fake & ~flips)],
                          [np.sum(~fake & flips), np.sum(~fake & ~flips)]])
        ps.append(chi2_contingency(table)[1])
    assert np.median(ps) > 0.01


def test_flip_targets():
    task = small_task({0: [1, 3, 5], 1: []})
    ex = {SliceTag.ASSOCIATED: list(range(8))}
    ids, y = flip_targets(NeuronCoord(0, 0), task.oracle(), ex, BaselineRegime.POSITIVE)
    assert list(ids) == list(range(8)) and list(y) == [0, 1, 0, 1, 0, 1, 0, 0]
    _, y = flip_targets(NeuronCoord(0, 1), task.oracle(), ex, 1)
    assert y.sum() == 0


def test_flip_target_rate_matches_truth():
    rng = np.random.default_rng(0)
    task = small_task({0: rng.choice(64, 20, replace=False)}, noise={SliceTag.ASSOCIATED: 0.05}, seed=2)
    _, y = flip_targets(NeuronCoord(0, 0), task.oracle(), {SliceTag.ASSOCIATED: list(range(64))}, 1)
    truth = 20 / 64
    expected = truth * 0.95 + (1 - truth) * 0.05
    assert abs(y.mean() - expected) <= 3 * np.sqrt(expected * (1 - expected) / 64)


def anchored_setup(seed=0, n=300, rule_cols=("a", "b")):
    rng = np.random.default_rng(seed)
    cols = {c: (rng.random(n) < 0.5).astype(int) for c in ("a", "b", "c", "d")}
    split = assign_splits(np.column_stack(list(cols.values())) + rng.normal(0, 0.01, (n, 4)), seed=seed)
    return matrix(cols, split), rng


def test_anchor_exact():
    m, _ = anchored_setup()
    y = (m.column("a") == 1) & (m.column("c") == 0)
    res = anchor_rule(NeuronCoord(0, 0), y, m)
    assert res.high_quality and res.test_mcc == pytest.approx(1.0)
    assert res.rule.role == "anchored-1->0"


def test_anchor_independent_targets():
    scores = []
    for seed in range(15):
        m, rng = anchored_setup(seed)
        y = rng.random(m.n_rows) < 0.3
        res = anchor_rule(NeuronCoord(0, 0), y, m)
        scores.append(res.test_mcc if res.test_mcc is not None else 0.0)
        assert not res.high_quality
    assert np.median(scores) < 0.3


def test_anchor_degenerate():
    m, _ = anchored_setup()
    res = anchor_rule(NeuronCoord(0, 0), np.zeros(m.n_rows), m)
    assert res.rule is None and not res.high_quality and res.reason


def test_test_labels_never_read():
    m, _ = anchored_setup(1)
    y = (m.column("a") == 1).astype(int)
    poisoned = y.copy()
    poisoned[m.mask("test")] = 1 - poisoned[m.mask("test")]
    a = extract_splitters(m, y, k=2)
    b = extract_splitters(m, poisoned, k=2)
    assert [r.to_text() for r in a] == [r.to_text() for r in b]
    assert [r.mcc for r in a] == [r.mcc for r in b]
    assert all("test" not in r.mcc for r in a)


def test_extract_splitters_distinct_and_nonconstant():
    m, _ = anchored_setup(2)
    y = ((m.column("a") == 1) | (m.column("b") == 1)).astype(int)
    rules = extract_splitters(m, y, k=3)
    assert rules[0].mcc["validation"] == pytest.approx(1.0)
    fired = [r.fires(m).tobytes() for r in rules]
    assert len(set(fired)) == len(rules)
    assert all(0 < r.fires(m).sum() < m.n_rows for r in rules)


def test_classifier_estimator():
    m, _ = anchored_setup(3)
    y = (m.column("b") == 1).astype(int)
    clf = RuleSetClassifier(max_depth=1).fit(m, y)
    assert (clf.predict(m) == y).all()
    assert clf.get_params()["max_depth"] == 1
    X = np.column_stack([m.values, np.zeros(m.n_rows)])
    plain = RuleSetClassifier().fit(X, y)
    assert plain.score(X, y) == 1.0


def test_gate_policy_and_eligibility():
    m = matrix({"a": [1, 0], "out": [0, 1]}, observable=(True, False))
    rule = parse_rule("IF (a) THEN fire")
    j = NeuronCoord(0, 0)
    assert gate_policy(rule, j, m, 0) == frozenset({j})
    assert gate_policy(rule, j, m, 1) == frozenset()
    with pytest.raises(GateIneligibleError, match="out"):
        gate_policy(parse_rule("IF (out) THEN fire"), j, m, 0)


def test_gate_repairs_exactly_flip_set():
    rng = np.random.default_rng(5)
    n = 64
    a = (rng.random(n) < 0.4).astype(int)
    F = np.flatnonzero(a)
    task = SyntheticTask((1,), {(0, SliceTag.ASSOCIATED): tuple(range(n))},
                         {(0, SliceTag.ASSOCIATED): {NeuronCoord(0, 0): sum(1 << int(i) for i in F)}})
    m = matrix({"a": a, "noise": rng.random(n)})
    rule = parse_rule("IF (a) THEN fire")
    out = gated_outcomes(rule, NeuronCoord(0, 0), m, task.oracle(), {SliceTag.ASSOCIATED: list(range(n))}, 0)
    repaired = {e for e, v in out.items() if v == 1}
    assert repaired == set(int(i) for i in F)


def test_assign_splits_fractions(rng):
    pts = rng.random((500, 3))
    tags = assign_splits(pts, (0.6, 0.2, 0.2), n_clusters=5, seed=1)
    counts = {t: int((tags == t).sum()) for t in ("train", "validation", "test")}
    assert abs(counts["train"] - 300) <= 10 and abs(counts["test"] - 100) <= 10
    assert (assign_splits(pts, seed=1) == assign_splits(pts, seed=1)).all()
    with pytest.raises(ValueError):
        assign_splits(pts, (0.5, 0.2, 0.2))
