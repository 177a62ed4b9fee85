import math

import numpy as np
import pytest

from agonistlab.core import SLICES, BaselineRegime, GroupEffect, NeuronCoord, SliceTag
from agonistlab.localizer import (BudgetExhaustedError, HierarchicalAblation, RegimeError, SearchConfig, SearchError,
                                  allocate_budget, cha_search, detect_catastrophic, localize_layers,
                                  read_agonists_csv, read_tree_jsonl, write_agonists_csv, write_tree_jsonl)
from agonistlab.oracle import PlantSpec, ground_truth_agonists, plant_task
from agonistlab.stats import binom_cdf
from conftest import full_subset, small_task


def layer0(task):
    return list(task.candidate_universe()[0])


def test_single_agonist_leaf():
    task = small_task({0: range(32)}, width=1)
    recs, stats, tree = cha_search([NeuronCoord(0, 0)], task.oracle(), full_subset(task), 1)
    assert [r.neuron for r in recs] == [NeuronCoord(0, 0)]
    assert tree[0].verdict == "accepted-singleton"
    assert stats.group_evaluations == 1


def test_background_only_root_pruned():
    task = plant_task(PlantSpec(layer_widths=(256,), background_cap=0.05, seed=2))
    recs, stats, tree = cha_search(layer0(task), task.oracle(), full_subset(task), 1)
    assert recs == [] and stats.group_evaluations == 1 and tree[0].verdict == "pruned"
    # pruned because the exact upper bound at 3/64 flips lies under tau
    assert tree[0].effect.ucb < 0.2


def bound(N, k):
    return 2 * k * (math.log2(N / k) + 2) + 1


@pytest.mark.parametrize("k", [1, 2, 4, 8])
def test_complexity_and_recall(k):
    task = plant_task(PlantSpec(layer_widths=(4096,), agonist_strengths=(0.5,) * k, seed=k))
    o = task.oracle()
    recs, stats, _ = cha_search(layer0(task), o, full_subset(task), 1)
    assert {r.neuron for r in recs} == set(ground_truth_agonists(task, 0.2, 1))
    assert stats.group_evaluations == o.query_count
    assert stats.group_evaluations <= bound(4096, k)
    if k == 8:
        assert stats.group_evaluations <= 164
    assert stats.visited == stats.pruned + stats.split + stats.accepted + stats.rejected


def test_allocate_budget():
    assert allocate_budget(0.05, "halving-spend") == (0.025, 0.025)
    assert allocate_budget(0.05, "fixed-per-node") == (0.05, 0.05)
    a, b = allocate_budget(0.05, "tree-uniform", 64)
    assert a == b == pytest.approx(0.05 / 127)
    assert a == pytest.approx(3.94e-4, abs=1e-6)


def test_tree_uniform_budget_never_exceeds_total():
    task = plant_task(PlantSpec(layer_widths=(512,), agonist_strengths=(0.5,) * 6, seed=1))
    cfg = SearchConfig(budget_mode="tree-uniform")
    _, stats, tree = cha_search(layer0(task), task.oracle(), full_subset(task), 1, cfg)
    assert stats.alpha_spent <= 0.05
    assert all(n.alpha == pytest.approx(0.05 / 1023) for n in tree)


def test_halving_spend_children():
    task = plant_task(PlantSpec(layer_widths=(64,), agonist_strengths=(0.5,), seed=1))
    _, _, tree = cha_search(layer0(task), task.oracle(), full_subset(task), 1, SearchConfig(budget_mode="halving-spend"))
    for node in tree:
        assert node.alpha == pytest.approx(0.05 / 2 ** node.depth)


def test_tree_structure_invariants():
    task = plant_task(PlantSpec(layer_widths=(100,), agonist_strengths=(0.5, 0.3), seed=9))
    _, _, tree = cha_search(layer0(task), task.oracle(), full_subset(task), 1)
    spans = {(n.lo, n.hi): n for n in tree}
    for n in tree:
        if n.verdict == "split":
            mid = n.lo + math.ceil((n.hi - n.lo) / 2)
            assert (n.lo, mid) in spans and (mid, n.hi) in spans
        if n.verdict == "pruned":
            assert n.effect.ucb < 0.2


def test_search_epsilon():
    with pytest.raises(ValueError):
        SearchConfig(search_epsilon=0.3)
    task = plant_task(PlantSpec(layer_widths=(256,), agonist_strengths=(0.5,), seed=3))
    cfg = SearchConfig(search_epsilon=0.1)
    recs, _, tree = cha_search(layer0(task), task.oracle(), full_subset(task), 1, cfg)
    assert len(recs) == 1
    assert all(n.effect.ucb < 0.1 for n in tree if n.verdict == "pruned")


def test_lcb_leaf_rule_is_stricter():
    task = small_task({0: range(14), 1: range(40)}, width=2)  # 14/64 just above tau
    pt, _, _ = cha_search(layer0(task), task.oracle(), full_subset(task), 1)
    lcb, _, _ = cha_search(layer0(task), task.oracle(), full_subset(task), 1, SearchConfig(leaf_rule="lcb"))
    assert {r.neuron for r in pt} == {NeuronCoord(0, 0), NeuronCoord(0, 1)}
    assert {r.neuron for r in lcb} == {NeuronCoord(0, 1)}


def test_overtopping_parent_recurses():
    spec = PlantSpec(layer_widths=(128,), agonist_strengths=(0.3,) * 4, n_antagonists=1, seed=5)
    task = plant_task(spec)
    recs, _, _ = cha_search(layer0(task), task.oracle(), full_subset(task), 1)
    found = {r.neuron for r in recs}
    assert {NeuronCoord.parse(c) for c in task.meta["agonists"]} <= found
    anta = NeuronCoord.parse(task.meta["antagonists"][0])
    assert next(r for r in recs if r.neuron == anta).catastrophic


def test_determinism_across_jobs():
    spec = PlantSpec(layer_widths=(1024,), agonist_strengths=(0.4, 0.5, 0.3), noise=0.05, seed=8)
    task = plant_task(spec)
    runs = []
    for jobs in (1, 4):
        cfg = SearchConfig(n_jobs=jobs, resample_policy="fresh-per-node", samples_per_slice=48)
        recs, stats, tree = cha_search(layer0(task), task.oracle(), full_subset(task), 1, cfg)
        runs.append(([r.neuron for r in recs], stats.to_dict(), [n.to_dict() for n in tree]))
    assert runs[0] == runs[1]


def test_fresh_per_node_uses_subsamples():
    task = plant_task(PlantSpec(layer_widths=(16,), agonist_strengths=(0.5,), seed=1))
    cfg = SearchConfig(resample_policy="fresh-per-node", samples_per_slice=20)
    _, _, tree = cha_search(layer0(task), task.oracle(), full_subset(task), 1, cfg)
    assert all(n.effect.n_plus == 20 for n in tree)


def test_errors():
    task = small_task({0: range(3)})
    with pytest.raises(ValueError):
        cha_search([], task.oracle(), full_subset(task), 1)
    with pytest.raises(ValueError):
        cha_search(layer0(task), task.oracle(), {SliceTag.ASSOCIATED: [0], SliceTag.UNRELATED: []}, 1)

    class Broken:
        query_count = 0

        def query_slices(self, *a):
            raise RuntimeError("boom")

    with pytest.raises(SearchError, match=r"\[0, 8\)"):
        cha_search(layer0(task), Broken(), full_subset(task), 1)
    with pytest.raises(BudgetExhaustedError):
        big = small_task({c: range(40) for c in range(8)})
        cfg = SearchConfig(budget_mode="tree-uniform")
        from agonistlab import localizer
        orig = localizer.allocate_budget
        localizer.allocate_budget = lambda a, m, n=None: (a, a)  # inflate the per-node level
        try:
            cha_search(layer0(big), big.oracle(), full_subset(big), 1, cfg)
        finally:
            localizer.allocate_budget = orig


def test_detect_catastrophic():
    task = plant_task(PlantSpec(layer_widths=(32,), agonist_strengths=(0.5,), n_antagonists=1, seed=2))
    o = task.oracle()
    sub = full_subset(task)
    assert detect_catastrophic(NeuronCoord.parse(task.meta["antagonists"][0]), o, sub, 1)
    assert not detect_catastrophic(NeuronCoord.parse(task.meta["agonists"][0]), o, sub, 1)
    with pytest.raises(RegimeError):
        detect_catastrophic(NeuronCoord(0, 0), o, sub, 0)


def test_detect_catastrophic_probability():
    # true both-slice accuracy 2/64 ~ 0.03 before noise; noise makes accuracy random
    n = 64
    task = small_task({0: range(62)}, {0: range(62)}, width=1, noise={SliceTag.ASSOCIATED: 0.0})
    # replace with an explicit Bernoulli model: accuracy per example 0.03, tol 0.05 -> <= 3 correct of 64
    p_acc = 0.03
    p_slice = binom_cdf(3, n, p_acc)
    p_true = p_slice ** 6
    hits = 0
    from agonistlab.oracle import SyntheticTask
    for seed in range(500):
        t = SyntheticTask(task.layer_widths, task.examples,
                          {k: {NeuronCoord(0, 0): (1 << n) - 1} for k in task.examples},
                          noise={SliceTag.ASSOCIATED: p_acc, SliceTag.UNRELATED: p_acc}, seed=seed)
        hits += detect_catastrophic(NeuronCoord(0, 0), t.oracle(), full_subset(t), 1, repeats=3, tol=0.05)
    assert abs(hits / 500 - p_true) <= 0.05


def test_localize_layers_and_estimator():
    spec = PlantSpec(layer_widths=(64, 64), agonist_strengths=(0.5, 0.4), agonist_layers=(0, 1), seed=3)
    task = plant_task(spec)
    recs, stats, tree = localize_layers(task.candidate_universe(), task.oracle(), full_subset(task), 1)
    assert {r.neuron.layer for r in recs} == {0, 1}
    assert {n.layer for n in tree} == {0, 1}
    est = HierarchicalAblation(tau=0.2).fit(task.candidate_universe(), task.oracle(), full_subset(task))
    assert [r.neuron for r in est.agonists_] == [r.neuron for r in recs]
    universe = [c for cs in task.candidate_universe().values() for c in cs]
    pred = est.predict(universe)
    assert pred.sum() == 2
    assert est.get_params()["alpha"] == 0.05


def test_io_round_trip(tmp_path):
    task = plant_task(PlantSpec(layer_widths=(64,), agonist_strengths=(0.5,), seed=1))
    recs, _, tree = cha_search(layer0(task), task.oracle(), full_subset(task), 1)
    write_tree_jsonl(tmp_path / "t.jsonl", tree)
    rows = read_tree_jsonl(tmp_path / "t.jsonl")
    assert len(rows) == len(tree)
    assert {"span", "depth", "verdict", "alpha", "delta_plus", "ucb_plus"} <= set(rows[0])
    write_agonists_csv(tmp_path / "a.csv", recs)
    got = read_agonists_csv(tmp_path / "a.csv")
    assert [NeuronCoord.parse(g["neuron"]) for g in got] == [r.neuron for r in recs]
