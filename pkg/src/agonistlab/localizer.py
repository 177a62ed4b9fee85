"""Contrastive hierarchical ablation: confidence-pruned binary group search."""
from __future__ import annotations

import csv
import hashlib
import json
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import SLICES, AgonistRecord, BaselineRegime, GroupEffect, NeuronCoord, SliceTag
from .oracle import BehaviorOracle
from .stats import cp_lower, measured_effect

BUDGET_MODES = ("fixed-per-node", "halving-spend", "tree-uniform")
RESAMPLE_POLICIES = ("fixed-subset", "fresh-per-node")
LEAF_RULES = ("point", "lcb")
VERDICTS = ("pruned", "split", "accepted-singleton", "rejected-singleton")


class BudgetExhaustedError(RuntimeError):
    pass


class SearchError(RuntimeError):
    pass


class RegimeError(ValueError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    tau: float = 0.2
    epsilon: float = 0.2
    alpha: float = 0.05
    budget_mode: str = "fixed-per-node"
    samples_per_slice: int = 64
    resample_policy: str = "fixed-subset"
    search_epsilon: float | None = None
    leaf_rule: str = "point"
    catastrophic_tol: float = 0.05
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self) -> None:
        for name in ("tau", "epsilon", "alpha"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name}={v} outside (0, 1)")
        if self.budget_mode not in BUDGET_MODES:
            raise ValueError(f"unknown budget mode {self.budget_mode!r}")
        if self.resample_policy not in RESAMPLE_POLICIES:
            raise ValueError(f"unknown resample policy {self.resample_policy!r}")
        if self.leaf_rule not in LEAF_RULES:
            raise ValueError(f"unknown leaf rule {self.leaf_rule!r}")
        if self.samples_per_slice < 1:
            raise ValueError("samples_per_slice must be positive")
        if self.search_epsilon is not None and not 0.0 < self.search_epsilon <= self.tau:
            raise ValueError("search_epsilon must lie in (0, tau]")

    @property
    def prune_threshold(self) -> float:
        return self.tau if self.search_epsilon is None else self.search_epsilon


@dataclass(frozen=True)
class SearchNode:
    lo: int
    hi: int
    depth: int
    alpha: float
    effect: GroupEffect
    verdict: str
    layer: int | None = None

    @property
    def size(self) -> int:
        return self.hi - self.lo

    def to_dict(self) -> dict:
        e = self.effect
        return {
            "layer": self.layer, "span": [self.lo, self.hi], "depth": self.depth,
            "delta_plus": e.delta_plus, "delta_minus": e.delta_minus,
            "n_plus": e.n_plus, "n_minus": e.n_minus,
            "ucb_plus": e.ucb_plus, "ucb_minus": e.ucb_minus,
            "verdict": self.verdict, "alpha": self.alpha,
        }


@dataclass
class SearchStats:
    group_evaluations: int = 0
    visited: int = 0
    pruned: int = 0
    split: int = 0
    accepted: int = 0
    rejected: int = 0
    per_depth: dict[int, Counter] = field(default_factory=dict)
    wall_time: float = 0.0
    alpha_spent: float = 0.0

    def merge(self, other: "SearchStats") -> "SearchStats":
        out = SearchStats(
            self.group_evaluations + other.group_evaluations,
            self.visited + other.visited, self.pruned + other.pruned,
            self.split + other.split, self.accepted + other.accepted,
            self.rejected + other.rejected,
            wall_time=self.wall_time + other.wall_time,
            alpha_spent=self.alpha_spent + other.alpha_spent,
        )
        for src in (self.per_depth, other.per_depth):
            for d, c in src.items():
                out.per_depth.setdefault(d, Counter()).update(c)
        return out

    def to_dict(self, include_time: bool = False) -> dict:
        out = {
            "group_evaluations": self.group_evaluations, "visited": self.visited,
            "pruned": self.pruned, "split": self.split,
            "accepted": self.accepted, "rejected": self.rejected,
            "per_depth": {str(d): dict(sorted(c.items())) for d, c in sorted(self.per_depth.items())},
        }
        if include_time:
            out["wall_time"] = self.wall_time
        return out


def allocate_budget(parent_alpha: float, mode: str, n_candidates: int | None = None) -> tuple[float, float]:
    """Child confidence budgets for one split.

    For ``tree-uniform`` the argument is the total budget and every node of
    the full potential tree (2N - 1 nodes) gets an equal share.
    """
    if not 0.0 < parent_alpha < 1.0:
        raise ValueError(f"alpha {parent_alpha} outside (0, 1)")
    if mode == "fixed-per-node":
        return parent_alpha, parent_alpha
    if mode == "halving-spend":
        return parent_alpha / 2, parent_alpha / 2
    if mode == "tree-uniform":
        if not n_candidates:
            raise ValueError("tree-uniform allocation needs the candidate count")
        share = parent_alpha / (2 * n_candidates - 1)
        return share, share
    raise ValueError(f"unknown budget mode {mode!r}")


def _subseed(*parts) -> int:
    h = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "little")


class _Evaluator:
    def __init__(self, candidates, oracle, eval_subset, regime, config):
        self.candidates = candidates
        self.oracle = oracle
        self.regime = regime
        self.config = config
        self.subset = {s: list(eval_subset.get(s, ())) for s in SLICES}
        for s in SLICES:
            if not self.subset[s]:
                raise ValueError(f"evaluation subset has no examples on slice {s.value}")
        self.m = {s: min(config.samples_per_slice, len(self.subset[s])) for s in SLICES}

    def examples_for(self, lo: int, hi: int) -> dict[SliceTag, list[int]]:
        if self.config.resample_policy == "fixed-subset":
            return {s: self.subset[s][: self.m[s]] for s in SLICES}
        rng = np.random.default_rng(_subseed(self.config.seed, int(self.regime), lo, hi))
        return {
            s: [self.subset[s][i] for i in sorted(rng.choice(len(self.subset[s]), self.m[s], replace=False))]
            for s in SLICES
        }

    def __call__(self, span: tuple[int, int, float]) -> GroupEffect:
        lo, hi, alpha = span
        b = int(self.regime)
        try:
            out = self.oracle.query_slices(self.candidates[lo:hi], self.regime, self.examples_for(lo, hi))
        except Exception as exc:
            raise SearchError(f"oracle failed on span [{lo}, {hi})") from exc
        xp = int(np.sum(out[SliceTag.ASSOCIATED] != b))
        xm = int(np.sum(out[SliceTag.UNRELATED] != b))
        return measured_effect(xp, len(out[SliceTag.ASSOCIATED]), xm, len(out[SliceTag.UNRELATED]), alpha)


def cha_search(
    layer_candidates: Sequence[NeuronCoord],
    oracle: BehaviorOracle,
    eval_subset: Mapping[SliceTag, Sequence[int]],
    regime: BaselineRegime,
    config: SearchConfig = SearchConfig(),
) -> tuple[list[AgonistRecord], SearchStats, list[SearchNode]]:
    """Binary hierarchical ablation over one layer's candidates.

    A node is pruned when the upper bound on its strength falls below the
    prune threshold; surviving singletons are accepted on the point estimate
    (or the lower bound when ``leaf_rule='lcb'``). Nodes are evaluated level
    by level, so the tree and stats do not depend on ``n_jobs``.
    """
    candidates = list(layer_candidates)
    if not candidates:
        raise ValueError("no candidates to search")
    regime = BaselineRegime(regime)
    n = len(candidates)
    evaluate = _Evaluator(candidates, oracle, eval_subset, regime, config)
    if config.budget_mode == "tree-uniform":
        node_alpha = allocate_budget(config.alpha, "tree-uniform", n)[0]
        root_alpha = node_alpha
    else:
        root_alpha = config.alpha
    layer = candidates[0].layer if len({c.layer for c in candidates}) == 1 else None

    start_count = oracle.query_count
    t0 = time.perf_counter()
    stats = SearchStats()
    tree: list[SearchNode] = []
    accepted: list[AgonistRecord] = []
    frontier = [(0, n, root_alpha)]
    depth = 0
    pool = ThreadPoolExecutor(config.n_jobs) if config.n_jobs > 1 else None
    try:
        while frontier:
            stats.alpha_spent += sum(a for _, _, a in frontier)
            if config.budget_mode == "tree-uniform" and stats.alpha_spent > config.alpha * (1 + 1e-9):
                raise BudgetExhaustedError(
                    f"confidence budget {config.alpha} spent at depth {depth}"
                )
            effects = list(pool.map(evaluate, frontier)) if pool else [evaluate(s) for s in frontier]
            next_frontier = []
            for (lo, hi, alpha), effect in zip(frontier, effects):
                if effect.ucb < config.prune_threshold:
                    verdict = "pruned"
                elif hi - lo == 1:
                    if config.leaf_rule == "point":
                        ok = effect.strength >= config.tau
                    else:
                        level = config.alpha / (2 * n)
                        ok = max(
                            cp_lower(effect.x_plus, effect.n_plus, level),
                            cp_lower(effect.x_minus, effect.n_minus, level),
                        ) >= config.tau
                    verdict = "accepted-singleton" if ok else "rejected-singleton"
                    if ok:
                        accepted.append(AgonistRecord.classify(
                            candidates[lo], regime, effect, config.tau, config.epsilon,
                            config.catastrophic_tol,
                        ))
                else:
                    verdict = "split"
                    mid = lo + (hi - lo + 1) // 2
                    if config.budget_mode == "tree-uniform":
                        a_left = a_right = alpha
                    else:
                        a_left, a_right = allocate_budget(alpha, config.budget_mode)
                    next_frontier += [(lo, mid, a_left), (mid, hi, a_right)]
                tree.append(SearchNode(lo, hi, depth, alpha, effect, verdict, layer))
                stats.per_depth.setdefault(depth, Counter())[verdict] += 1
            frontier = next_frontier
            depth += 1
    finally:
        if pool:
            pool.shutdown()
    stats.wall_time = time.perf_counter() - t0
    stats.group_evaluations = oracle.query_count - start_count
    stats.visited = len(tree)
    verdicts = Counter(node.verdict for node in tree)
    stats.pruned = verdicts["pruned"]
    stats.split = verdicts["split"]
    stats.accepted = verdicts["accepted-singleton"]
    stats.rejected = verdicts["rejected-singleton"]
    accepted.sort(key=lambda r: r.neuron)
    return accepted, stats, tree


def localize_layers(
    universe: Mapping[int, Sequence[NeuronCoord]],
    oracle: BehaviorOracle,
    eval_subset: Mapping[SliceTag, Sequence[int]],
    regime: BaselineRegime,
    config: SearchConfig = SearchConfig(),
) -> tuple[list[AgonistRecord], SearchStats, list[SearchNode]]:
    """Run the search independently in every nonempty layer and merge the results."""
    records: list[AgonistRecord] = []
    stats = SearchStats()
    tree: list[SearchNode] = []
    for layer in sorted(universe):
        cands = list(universe[layer])
        if not cands:
            continue
        r, s, t = cha_search(cands, oracle, eval_subset, regime, config)
        records += r
        stats = stats.merge(s)
        tree += t
    records.sort(key=lambda r: r.neuron)
    return records, stats, tree


def detect_catastrophic(
    neuron: NeuronCoord,
    oracle: BehaviorOracle,
    eval_subset: Mapping[SliceTag, Sequence[int]],
    regime: BaselineRegime,
    repeats: int = 3,
    tol: float = 0.05,
) -> bool:
    """Flag a neuron whose ablation leaves near-zero accuracy on both slices in every repeat."""
    if BaselineRegime(regime) is not BaselineRegime.POSITIVE:
        raise RegimeError("the always-catastrophic check is defined for the baseline-positive regime only")
    if repeats < 1:
        raise ValueError("repeats must be positive")
    examples = {s: list(eval_subset[s]) for s in SLICES}
    for _ in range(repeats):
        out = oracle.query_slices([neuron], BaselineRegime.POSITIVE, examples)
        if any(np.mean(out[s] == 1) > tol for s in SLICES):
            return False
    return True


class HierarchicalAblation(BaseEstimator):
    """Estimator wrapper around :func:`localize_layers`.

    ``fit`` takes the candidate universe (a per-layer mapping, or a flat
    sequence of coordinates) and the oracle; fitted attributes are
    ``agonists_``, ``stats_`` and ``tree_``.
    """

    def __init__(self, tau=0.2, epsilon=0.2, alpha=0.05, budget_mode="fixed-per-node",
                 samples_per_slice=64, resample_policy="fixed-subset", search_epsilon=None,
                 leaf_rule="point", catastrophic_tol=0.05, seed=0, n_jobs=1):
        self.tau = tau
        self.epsilon = epsilon
        self.alpha = alpha
        self.budget_mode = budget_mode
        self.samples_per_slice = samples_per_slice
        self.resample_policy = resample_policy
        self.search_epsilon = search_epsilon
        self.leaf_rule = leaf_rule
        self.catastrophic_tol = catastrophic_tol
        self.seed = seed
        self.n_jobs = n_jobs

    @property
    def config(self) -> SearchConfig:
        return SearchConfig(**self.get_params())

    def fit(self, candidates, oracle: BehaviorOracle, eval_subset, regime=BaselineRegime.POSITIVE):
        if not isinstance(candidates, Mapping):
            grouped: dict[int, list[NeuronCoord]] = {}
            for c in candidates:
                grouped.setdefault(c.layer, []).append(c)
            candidates = grouped
        self.regime_ = BaselineRegime(regime)
        self.agonists_, self.stats_, self.tree_ = localize_layers(
            candidates, oracle, eval_subset, self.regime_, self.config
        )
        return self

    def predict(self, candidates) -> np.ndarray:
        """1 for each coordinate localized as an agonist, else 0."""
        check_is_fitted(self, "agonists_")
        found = {r.neuron for r in self.agonists_}
        return np.array([int(c in found) for c in candidates], dtype=int)


def write_tree_jsonl(path, tree: Sequence[SearchNode]) -> None:
    with open(path, "w") as fh:
        for node in tree:
            fh.write(json.dumps(node.to_dict(), sort_keys=True) + "\n")


def read_tree_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


AGONIST_COLUMNS = ["neuron", "regime", "delta_plus", "delta_minus", "strength", "selectivity",
                   "catastrophic", "selective"]


def write_agonists_csv(path, records: Sequence[AgonistRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGONIST_COLUMNS)
        for r in records:
            e = r.effect
            w.writerow([str(r.neuron), int(r.regime), f"{e.delta_plus:.6f}", f"{e.delta_minus:.6f}",
                        f"{e.strength:.6f}", f"{e.selectivity:.6f}", int(r.catastrophic), int(r.selective)])


def read_agonists_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
