import pytest
from hypothesis import given, strategies as st

from agonistlab.core import (AgonistRecord, BaselineRegime, EmptyInputError, GroupEffect, NeuronCoord, SliceTag,
                             UndefinedDominanceError, accuracy_gap, dominance_ratio, flip_rate, jaccard,
                             strength_and_selectivity)

rates = st.floats(0.0, 1.0, allow_nan=False)


def test_coord_ordering_and_text():
    a, b, c = NeuronCoord(0, 9), NeuronCoord(1, 0), NeuronCoord(1, 3)
    assert sorted([c, b, a]) == [a, b, c]
    assert str(NeuronCoord(4, 3206)) == "m4:3206"
    assert NeuronCoord.parse("m4:3206") == NeuronCoord(4, 3206)
    with pytest.raises(ValueError):
        NeuronCoord.parse("layer4")
    with pytest.raises(ValueError):
        NeuronCoord(-1, 0)


def test_regime_and_slice_tags():
    assert BaselineRegime.POSITIVE.direction == "1->0"
    assert BaselineRegime.NEGATIVE.direction == "0->1"
    assert SliceTag.ASSOCIATED.other is SliceTag.UNRELATED


def test_flip_rate_examples():
    assert flip_rate([1, 1, 1], BaselineRegime.POSITIVE) == 0.0
    assert flip_rate([1, 0, 1, 1], BaselineRegime.NEGATIVE) == 0.75
    # post-ablation accuracy 0.016 on the associated slice under b=1
    outcomes = [1] * 16 + [0] * 984
    assert flip_rate(outcomes, BaselineRegime.POSITIVE) == pytest.approx(0.984)
    with pytest.raises(EmptyInputError):
        flip_rate([], BaselineRegime.POSITIVE)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=50))
def test_flip_rate_relates_to_accuracy(outcomes):
    acc = sum(outcomes) / len(outcomes)
    assert flip_rate(outcomes, 1) == pytest.approx(1 - acc)
    assert flip_rate(outcomes, 0) == pytest.approx(acc)


def test_strength_selectivity_from_accuracies():
    e = GroupEffect.from_accuracies(0.938, 0.859, BaselineRegime.POSITIVE)
    strength, sel, signed = strength_and_selectivity(e)
    assert strength == pytest.approx(0.141)
    assert sel == pytest.approx(0.079)
    assert signed == pytest.approx(-0.079)
    parent = GroupEffect.from_accuracies(0.016, 0.0, BaselineRegime.POSITIVE)
    assert parent.strength == pytest.approx(1.0)
    assert parent.selectivity == pytest.approx(0.016)
    assert GroupEffect(0.3, 0.3, 10, 10).selectivity == 0.0


@given(rates, rates)
def test_swap_symmetries(a, b):
    e = GroupEffect(a, b, 10, 10)
    s = e.swapped()
    assert s.strength == e.strength
    assert s.selectivity == pytest.approx(e.selectivity)
    assert s.signed_selectivity == pytest.approx(-e.signed_selectivity)


def test_group_effect_validation():
    with pytest.raises(ValueError):
        GroupEffect(1.2, 0.0, 1, 1)
    with pytest.raises(ValueError):
        GroupEffect(0.5, 0.0, 1, 1, ucb_plus=0.4)
    e = GroupEffect(13 / 64, 5 / 64, 64, 64)
    assert (e.x_plus, e.x_minus) == (13, 5)


def test_accuracy_gap():
    e = GroupEffect.from_accuracies(0.938, 0.859, BaselineRegime.POSITIVE)
    assert accuracy_gap(e, BaselineRegime.POSITIVE) == pytest.approx(-0.079)
    e0 = GroupEffect(0.2, 0.5, 1, 1)
    assert accuracy_gap(e0, BaselineRegime.NEGATIVE) == pytest.approx(0.3)


def test_classify_flags():
    j = NeuronCoord(0, 1)
    sel = AgonistRecord.classify(j, BaselineRegime.POSITIVE, GroupEffect(0.5, 0.1, 64, 64), 0.2, 0.2)
    assert sel.selective and not sel.catastrophic
    cat = AgonistRecord.classify(j, BaselineRegime.POSITIVE, GroupEffect(1.0, 0.98, 64, 64), 0.2, 0.2)
    assert cat.catastrophic and not cat.selective
    strong = AgonistRecord.classify(j, BaselineRegime.POSITIVE, GroupEffect(0.6, 0.5, 64, 64), 0.2, 0.2)
    assert not strong.catastrophic and not strong.selective


def test_dominance_examples():
    assert dominance_ratio(1.0, {frozenset({1}): 1.0}) == 1.0
    assert dominance_ratio(0.8, {(1,): 0.4, (2,): 0.1}) == 0.5
    with pytest.raises(UndefinedDominanceError):
        dominance_ratio(0.0, {(1,): 0.1})
    with pytest.raises(ValueError):
        dominance_ratio(0.5, {(1, 2): 0.1}, m=1)
    assert dominance_ratio(0.5, {(1, 2): 0.4}, m=2) == pytest.approx(0.8)


def test_dominance_on_planted_union():
    from agonistlab.core import SliceTag
    from conftest import small_task

    # dominant neuron flips 0.9 of slice +, a partner adds 2 more examples -> group 0.92 (on 100 examples)
    task = small_task({0: range(90), 1: list(range(85, 92))}, n=100)
    group = [NeuronCoord(0, 0), NeuronCoord(0, 1)]
    g = task.exact_strength(group, 1)
    single = {(j,): task.exact_strength([j], 1) for j in group}
    assert g == pytest.approx(0.92)
    assert dominance_ratio(g, single) == pytest.approx(0.9 / 0.92)
    assert task.exact_rate(group, 1, SliceTag.UNRELATED) == 0.0


@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0), st.floats(0.1, 10.0))
def test_dominance_scale_free(g, frac, c):
    s = g * frac
    assert dominance_ratio(g * c, {(1,): s * c}) == pytest.approx(dominance_ratio(g, {(1,): s}))


def test_jaccard_examples():
    a = set(range(122))
    b = set(range(114, 234))
    assert len(a & b) == 8 and len(b) == 120
    assert jaccard(a, b) == pytest.approx(8 / 234)
    assert jaccard({1, 2}, {1, 2}) == 1.0
    assert jaccard({1}, {2}) == 0.0
    assert jaccard(set(), set()) == 0.0


@given(st.sets(st.integers(0, 20)), st.sets(st.integers(0, 20)))
def test_jaccard_properties(a, b):
    j = jaccard(a, b)
    assert j == jaccard(b, a)
    assert 0.0 <= j <= 1.0
    if a or b:
        assert (j == 1.0) == (a == b)
