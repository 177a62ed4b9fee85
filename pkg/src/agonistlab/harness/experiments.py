"""Pipeline stages and the E0-E3 experiment drivers.

Every payload written through :class:`ArtifactStore` is a deterministic
function of the config; wall times and timestamps go to ``metadata.json``.
"""
from __future__ import annotations

import csv
import io
import json
import statistics
import time
from contextlib import contextmanager
from dataclasses import replace
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import mannwhitneyu

from ..baseline import brute_force_singletons, recall_by_tier
from ..candidates import (ground_truth_reducer, retain_top, task_surrogate_ranking)
from ..core import SLICES, AgonistRecord, BaselineRegime, NeuronCoord, SliceTag
from ..coverage import CoverageConfig, CoveragePlan, greedy_k_center, pca_embed, random_plan, spectral_plan
from ..localizer import SearchConfig, localize_layers
from ..oracle import PlantSpec, SyntheticTask, plant_task
from ..rules import (AnchorResult, RuleSet, anchor_rule, assign_splits, extract_splitters, fake_rule_control,
                     flip_targets, induce_split)
from ..stats import FilterThresholds, score_and_filter
from .config import RunConfig, derive_seed
from .world import World, make_world

DIRECTION = {1: "1->0", 0: "0->1"}
CONDITIONS = {
    "rule_spectral": ("rule", "spectral"),
    "spectral_only": ("cluster", "spectral"),
    "rule_random": ("rule", "random"),
    "fake_spectral": ("fake", "spectral"),
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage


def _tkey(t: float) -> str:
    return f"{t:.2f}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (NeuronCoord, SliceTag)):
        return str(obj.value) if isinstance(obj, SliceTag) else str(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


class ArtifactStore:
    """Writes artifacts under ``root``; with ``root=None`` nothing touches disk."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self.files: list[str] = []
        self.timings: dict[str, float] = {}

    def _path(self, rel: str) -> Path | None:
        self.files.append(rel)
        if self.root is None:
            return None
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def json(self, rel: str, obj) -> str:
        p = self._path(rel)
        if p is not None:
            p.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n")
        return rel

    def text(self, rel: str, text: str) -> str:
        p = self._path(rel)
        if p is not None:
            p.write_text(text)
        return rel

    def csv(self, rel: str, header: Sequence[str], rows) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return self.text(rel, buf.getvalue())

    def with_writer(self, rel: str, fn) -> str:
        p = self._path(rel)
        if p is not None:
            fn(p)
        return rel

    def metadata(self, extra: Mapping | None = None) -> None:
        if self.root is None:
            return
        meta = {"written_at": datetime.now(timezone.utc).isoformat(), "timings_s": self.timings,
                "files": sorted(set(self.files))}
        meta.update(extra or {})
        (self.root / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


class Pipeline:
    """Stage implementations bound to one config and master seed."""

    def __init__(self, config: RunConfig, seed: int | None = None):
        self.cfg = config
        self.seed = config.seed if seed is None else int(seed)

    def sub(self, label: str) -> int:
        return derive_seed(self.seed, label)

    # -- inputs --------------------------------------------------------------------

    @cached_property
    def world(self) -> World:
        if self.cfg.task.manifest and self.cfg.task.kind == "world":
            return World.load(self.cfg.task.manifest)
        return make_world(self.cfg.task.world, self.sub("world"))

    @cached_property
    def matrix(self):
        w = self.world
        X = w.matrix.values
        pts = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        r = self.cfg.rules
        tags = assign_splits(pts, tuple(r.split_fractions), r.split_clusters, self.sub("splits"))
        return w.matrix.with_split(tags)

    @property
    def search_config(self) -> SearchConfig:
        s = self.cfg.search
        return SearchConfig(tau=s.tau, epsilon=s.epsilon, alpha=s.alpha, budget_mode=s.budget_mode,
                            samples_per_slice=s.samples_per_slice, resample_policy=s.resample_policy,
                            leaf_rule=s.leaf_rule, seed=self.sub("search"), n_jobs=s.n_jobs)

    @property
    def coverage_config(self) -> CoverageConfig:
        c = self.cfg.coverage
        return CoverageConfig(c.d_pca, c.n_clusters, c.n_sel, c.radius, c.length_tolerance)

    # -- stage 1: features and splitters -------------------------------------------

    def features(self, labels=None):
        w = self.world
        y = w.baseline.astype(bool) if labels is None else np.asarray(labels, dtype=bool)
        return score_and_filter(w.matrix.values, y, FilterThresholds())

    def splitters(self, fake: bool = False) -> tuple[list[RuleSet], np.ndarray]:
        y = self.world.baseline.astype(bool)
        if fake:
            y = fake_rule_control(y, self.sub("fake-rule"))
        _, kept, _ = self.features(y)
        names = [self.matrix.names[i] for i in kept] or list(self.matrix.names)
        cols = [self.matrix.column_index(n) for n in names]
        m = self.matrix
        sub = replace(m, names=tuple(names), values=m.values[:, cols], kinds=tuple(m.kinds[i] for i in cols),
                      provenance=tuple(m.provenance[i] for i in cols),
                      observable=tuple(m.observable[i] for i in cols))
        r = self.cfg.rules
        rules = extract_splitters(sub, y, r.n_splitters, r.max_depth, r.beam_width, r.seed_k,
                                  role="fake-control" if fake else "splitter")
        return rules, y

    def rule_split(self, rule: RuleSet) -> dict[int, tuple[list[int], list[int]]]:
        return {b: induce_split(rule, self.matrix, self.world.baseline, BaselineRegime(b)) for b in self.cfg.regimes}

    def cluster_split(self) -> tuple[dict[int, tuple[list[int], list[int]]], dict]:
        """Two-way k-center split of the embedding; '+' is the cluster with the higher baseline-1 rate."""
        w = self.world
        E = w.embedding
        pts = pca_embed(E, min(self.cfg.coverage.d_pca, *E.shape)).embedding
        _, assign, _ = greedy_k_center(pts, 2)
        rates = [float(w.baseline[assign == c].mean()) if (assign == c).any() else -1.0 for c in (0, 1)]
        plus_cluster = int(rates[1] > rates[0])
        fires = assign == plus_cluster
        out = {}
        for b in self.cfg.regimes:
            in_b = w.baseline == b
            out[b] = ([int(e) for e in w.ids[in_b & fires]], [int(e) for e in w.ids[in_b & ~fires]])
        val = self.matrix.mask("validation")
        from ..stats import mcc_score
        info = {"cluster_rates": rates, "plus_cluster": plus_cluster,
                "mcc": {"validation": mcc_score(w.baseline[val].astype(bool), fires[val])}}
        return out, info

    # -- stage 3: coverage -----------------------------------------------------------

    def plan(self, plus, minus, kind: str, regime: int) -> CoveragePlan:
        w = self.world
        if not self.cfg.stages.coverage:
            return CoveragePlan("full", {"+": sorted(plus), "-": sorted(minus)}, [], {}, {}, {})
        lengths = {int(e): float(v) for e, v in zip(w.ids, w.lengths)}
        fn = spectral_plan if kind == "spectral" else random_plan
        return fn(w.embedding, w.ids, plus, minus, self.coverage_config, lengths, self.sub(f"plan/{kind}/{regime}"))

    # -- stage 2: reduction ------------------------------------------------------------

    def task(self, splits: Mapping[int, tuple[Sequence[int], Sequence[int]]]) -> SyntheticTask:
        return self.world.task_for_split(splits, self.cfg.task.world.oracle_noise, self.sub("oracle"))

    def candidates(self, task: SyntheticTask) -> tuple[dict[int, list[NeuronCoord]], dict]:
        r = self.cfg.reduce
        if not self.cfg.stages.reduce or r.kind == "none":
            return {k: list(v) for k, v in task.candidate_universe().items()}, {"kind": "none"}
        if r.M == 0:
            return {}, {"kind": r.kind, "M": 0}
        if r.kind == "ground-truth":
            res = ground_truth_reducer(task, r.M, r.leak_rate, self.sub("reduce"), self.cfg.search.tau,
                                       [BaselineRegime(b) for b in self.cfg.regimes])
            return res.retained, {"kind": r.kind, "M": r.M, "leak_rate": r.leak_rate,
                                  "dropped": [str(c) for c in res.dropped], "planted": [str(c) for c in res.planted]}
        ranking = task_surrogate_ranking(task, BaselineRegime(self.cfg.regimes[0]), steps=r.ig_steps,
                                         seed=self.sub("ig"))
        return retain_top(ranking, r.M), {"kind": "ig", "M": r.M, "ranking": ranking}

    # -- stage 4: anchoring ---------------------------------------------------------------

    def anchor(self, oracle, records: Sequence[AgonistRecord], regime: int, plus, minus) -> list[AnchorResult]:
        examples = {SliceTag.ASSOCIATED: sorted(plus), SliceTag.UNRELATED: sorted(minus)}
        r = self.cfg.rules
        out = []
        for rec in records:
            if rec.catastrophic:
                continue
            ids, y = flip_targets(rec.neuron, oracle, examples, BaselineRegime(regime))
            out.append(anchor_rule(rec.neuron, y, self.matrix.subset(ids), BaselineRegime(regime),
                                   r.hq_threshold, r.max_depth, r.beam_width, r.seed_k))
        return out


def hq_counts(anchors: Sequence[AnchorResult], thresholds: Sequence[float]) -> dict[str, int]:
    scores = [a.test_mcc for a in anchors if a.test_mcc is not None]
    return {_tkey(t): sum(s >= t for s in scores) for t in thresholds}


def union_coverage(oracle, neurons: Sequence[NeuronCoord], eval_subset: Mapping[SliceTag, Sequence[int]],
                   regime: int) -> dict:
    """Fraction of evaluated examples flipped by any of ``neurons``, with greedy incremental gains."""
    ids = [e for s in SLICES for e in eval_subset[s]]
    per: dict[NeuronCoord, set[int]] = {}
    for j in neurons:
        out = oracle.query_slices([j], BaselineRegime(regime), {s: list(eval_subset[s]) for s in SLICES})
        per[j] = {e for s in SLICES for e, v in zip(eval_subset[s], out[s]) if int(v) != regime}
    covered: set[int] = set()
    steps = []
    remaining = dict(per)
    while remaining:
        j = min(remaining, key=lambda c: (-len(remaining[c] - covered), c))
        gain = len(remaining.pop(j) - covered)
        covered |= per[j]
        steps.append({"neuron": str(j), "gain": gain, "cumulative": len(covered)})
    return {"direction": DIRECTION[regime], "n_evaluated": len(ids), "n_flipped": len(covered),
            "fraction": len(covered) / len(ids) if ids else 0.0, "incremental": steps}


def run_condition(pipe: Pipeline, store: ArtifactStore, prefix: str, split_kind: str, plan_kind: str) -> dict:
    """Stages 1-4 for one (split, plan) condition."""
    cfg = pipe.cfg
    result: dict = {"condition": prefix, "split": split_kind, "plan": plan_kind, "regimes": {}}
    with store.stage(f"{prefix}:splitter"):
        if split_kind in ("rule", "fake"):
            rules, _ = pipe.splitters(fake=split_kind == "fake")
            rule = rules[0]
            src = store.json(f"{prefix}/splitters.json", [r.to_dict() for r in rules])
            store.text(f"{prefix}/splitters.txt", "".join(r.to_text() + "\n" for r in rules))
            splits = pipe.rule_split(rule)
            result["splitter"] = {"rule": rule.to_text(), "mcc": dict(rule.mcc),
                                  "all_mcc": [dict(r.mcc) for r in rules], "source": src}
        else:
            splits, info = pipe.cluster_split()
            src = store.json(f"{prefix}/splitters.json", info)
            result["splitter"] = {"rule": "k-center(K=2)", "mcc": info["mcc"], "source": src}
    live = {b: s for b, s in splits.items() if s[0] and s[1]}
    for b in sorted(set(splits) - set(live)):
        result["regimes"][str(b)] = {"direction": DIRECTION[b], "skipped": "empty slice",
                                     "n_plus": len(splits[b][0]), "n_minus": len(splits[b][1])}
    if not live:
        result["hq_total"] = {_tkey(t): 0 for t in cfg.rules.thresholds}
        return result
    with store.stage(f"{prefix}:task"):
        task = pipe.task(live)
        task_src = store.with_writer(f"{prefix}/task.json", task.save)
        oracle = task.oracle()
    with store.stage(f"{prefix}:reduce"):
        universe, rinfo = pipe.candidates(task)
        ranking = rinfo.pop("ranking", None)
        if ranking is not None:
            from ..candidates import write_rankings_csv
            store.with_writer(f"{prefix}/rankings.csv", lambda p: write_rankings_csv(p, ranking, universe))
        rinfo["retained"] = sum(len(v) for v in universe.values())
        result["reduce"] = rinfo | {"source": store.json(f"{prefix}/retained.json",
                                                         {str(k): [str(c) for c in v] for k, v in universe.items()})}
    totals = {_tkey(t): 0 for t in cfg.rules.thresholds}
    from ..localizer import write_agonists_csv, write_tree_jsonl
    for b in sorted(live):
        plus, minus = live[b]
        with store.stage(f"{prefix}:coverage"):
            plan = pipe.plan(plus, minus, plan_kind, b)
            plan_src = store.json(f"{prefix}/plan_b{b}.json", plan.to_dict())
        sub = plan.eval_subset()
        with store.stage(f"{prefix}:cha"):
            if any(universe.values()):
                records, stats, tree = localize_layers(universe, oracle, sub, BaselineRegime(b), pipe.search_config)
            else:
                from ..localizer import SearchStats
                records, stats, tree = [], SearchStats(), []
            tree_src = store.with_writer(f"{prefix}/tree_b{b}.jsonl", lambda p: write_tree_jsonl(p, tree))
            ag_src = store.with_writer(f"{prefix}/agonists_b{b}.csv", lambda p: write_agonists_csv(p, records))
        with store.stage(f"{prefix}:anchor"):
            anchors = pipe.anchor(oracle, records, b, plus, minus)
            an_src = store.json(f"{prefix}/anchors_b{b}.json", [a.to_dict() for a in anchors])
        counts = hq_counts(anchors, cfg.rules.thresholds)
        for k, v in counts.items():
            totals[k] += v
        hq = [a.neuron for a in anchors if a.high_quality]
        with store.stage(f"{prefix}:union"):
            cov = union_coverage(oracle, hq, sub, b)
        planted = {n.coord for n in pipe.world.planted(b)}
        result["regimes"][str(b)] = {
            "direction": DIRECTION[b],
            "n_plus": len(plus), "n_minus": len(minus),
            "coverage": {"kind": plan.kind, "diagnostics": plan.diagnostics, "source": plan_src,
                         "selected_plus": list(plan.selected["+"])},
            "search": stats.to_dict() | {"source": tree_src},
            "agonists": {
                "count": len(records),
                "catastrophic": sum(r.catastrophic for r in records),
                "selective": sum(r.selective for r in records),
                "selectivity": sorted(round(r.effect.selectivity, 6) for r in records),
                "planted_found": sum(r.neuron in planted for r in records),
                "planted_total": len(planted),
                "source": ag_src,
            },
            "anchors": {
                "test_mcc": {str(a.neuron): a.test_mcc for a in anchors},
                "hq_counts": counts,
                "threshold": cfg.rules.hq_threshold,
                "source": an_src,
            },
            "union_coverage": cov | {"source": an_src},
        }
    result["hq_total"] = totals
    result["task_source"] = task_src
    return result


def _report(store: ArtifactStore, name: str, cfg: RunConfig, seed: int, body: dict) -> dict:
    report = {"experiment": name, "schema_version": cfg.schema_version, "master_seed": seed,
              "config_digest": cfg.digest(), "thresholds": list(cfg.rules.thresholds)} | body
    store.json("config.json", cfg.to_dict())
    store.json("report.json", report)
    return report


def _hq_rows(cond: str, seed: int, res: dict) -> list[list]:
    return [[cond, seed, t, n] for t, n in res["hq_total"].items()]


def run_e0(cfg: RunConfig, out=None) -> dict:
    store = ArtifactStore(out)
    pipe = Pipeline(cfg)
    res = run_condition(pipe, store, "e0", "rule", "spectral")
    store.csv("hq_counts.csv", ["condition", "seed", "threshold", "count"], _hq_rows("e0", cfg.seed, res))
    rows = []
    for b, r in sorted(res["regimes"].items()):
        if "union_coverage" in r:
            u = r["union_coverage"]
            rows.append([u["direction"], u["n_evaluated"], u["n_flipped"], repr(u["fraction"])])
    store.csv("union_coverage.csv", ["direction", "n_evaluated", "n_flipped", "fraction"], rows)
    report = _report(store, "e0", cfg, cfg.seed, {"result": res, "tables": ["hq_counts.csv", "union_coverage.csv"]})
    store.metadata()
    return report


def _seeds(cfg: RunConfig, label: str) -> list[int]:
    if cfg.n_seeds == 1:
        return [cfg.seed]
    return [derive_seed(cfg.seed, f"{label}/{i}") for i in range(cfg.n_seeds)]


def run_e1(cfg: RunConfig, out=None, conditions: Sequence[str] = tuple(CONDITIONS)) -> dict:
    store = ArtifactStore(out)
    per_seed: dict[str, list[dict]] = {c: [] for c in conditions}
    rows = []
    for i, seed in enumerate(_seeds(cfg, "e1")):
        pipe = Pipeline(cfg, seed)
        for cond in conditions:
            split_kind, plan_kind = CONDITIONS[cond]
            res = run_condition(pipe, store, f"seed{i}/{cond}", split_kind, plan_kind)
            per_seed[cond].append({"seed": seed, "hq_total": res["hq_total"],
                                   "splitter_mcc": res["splitter"]["mcc"], "source": f"seed{i}/{cond}"})
            rows += _hq_rows(cond, seed, res)
    summary = {}
    for cond, runs in per_seed.items():
        summary[cond] = {
            "median_hq": {_tkey(t): statistics.median(r["hq_total"][_tkey(t)] for r in runs)
                          for t in cfg.rules.thresholds},
            "median_splitter_validation_mcc": statistics.median(
                r["splitter_mcc"].get("validation", r["splitter_mcc"].get("train", 0.0)) for r in runs),
        }
    tests = {}
    if "rule_spectral" in per_seed and "fake_spectral" in per_seed and cfg.n_seeds > 1:
        for t in cfg.rules.thresholds:
            a = [r["hq_total"][_tkey(t)] for r in per_seed["rule_spectral"]]
            b = [r["hq_total"][_tkey(t)] for r in per_seed["fake_spectral"]]
            if len(set(a + b)) > 1:
                u = mannwhitneyu(a, b, alternative="two-sided")
                tests[_tkey(t)] = {"U": float(u.statistic), "p": float(u.pvalue)}
            else:
                tests[_tkey(t)] = {"U": None, "p": None}
    store.csv("hq_counts.csv", ["condition", "seed", "threshold", "count"], rows)
    report = _report(store, "e1", cfg, cfg.seed, {"per_seed": per_seed, "summary": summary,
                                                   "mann_whitney_rule_vs_fake": tests,
                                                   "tables": ["hq_counts.csv"]})
    store.metadata()
    return report


def _plant_spec(cfg: RunConfig, seed: int) -> PlantSpec:
    p = cfg.task.plant
    return PlantSpec(layer_widths=tuple(p.layer_widths), n_per_slice=p.n_per_slice,
                     agonist_strengths=tuple(p.agonist_strengths), overlap=p.overlap,
                     minus_fraction=p.minus_fraction, n_antagonists=p.n_antagonists,
                     background_cap=p.background_cap, regimes=tuple(p.regimes), tau=cfg.search.tau,
                     noise=p.noise, seed=seed)


def task_and_subsets(pipe: Pipeline, manifest=None) -> tuple[SyntheticTask, dict[int, dict]]:
    """Task plus per-regime evaluation subsets.

    Planted tasks (or a task manifest) are evaluated on their full slices;
    world tasks use the rule split and the spectral plan.
    """
    cfg = pipe.cfg
    if manifest or cfg.task.kind == "plant":
        path = manifest or cfg.task.manifest
        task = SyntheticTask.load(path) if path else plant_task(_plant_spec(cfg, pipe.sub("plant")))
        regimes = sorted({int(b) for b, _ in task.examples})
        return task, {b: {s: list(task.slice_ids(BaselineRegime(b), s)) for s in SLICES} for b in regimes}
    rules, _ = pipe.splitters()
    splits = {b: s for b, s in pipe.rule_split(rules[0]).items() if s[0] and s[1]}
    task = pipe.task(splits)
    return task, {b: pipe.plan(*splits[b], "spectral", b).eval_subset() for b in sorted(splits)}


def run_e2(cfg: RunConfig, out=None) -> dict:
    """CHA against exhaustive singletons on a shared candidate set and evaluation subset."""
    store = ArtifactStore(out)
    pipe = Pipeline(cfg)
    scfg = pipe.search_config
    with store.stage("task"):
        task, subsets = task_and_subsets(pipe)
        regimes = sorted(subsets)
        task_src = store.with_writer("task.json", task.save)
        universe, rinfo = pipe.candidates(task)
        rinfo.pop("ranking", None)
    flat = [c for layer in sorted(universe) for c in universe[layer]]
    reports, regimes_out = [], {}
    from ..baseline import write_recall_csv
    from ..localizer import write_agonists_csv, write_tree_jsonl
    for b in regimes:
        oracle_a = task.oracle()
        oracle_b = task.oracle()
        with store.stage("cha"):
            records, stats, tree = localize_layers(universe, oracle_a, subsets[b], BaselineRegime(b), scfg)
            store.with_writer(f"tree_b{b}.jsonl", lambda p: write_tree_jsonl(p, tree))
            cha_src = store.with_writer(f"cha_b{b}.csv", lambda p: write_agonists_csv(p, records))
        with store.stage("brute"):
            bf = brute_force_singletons(flat, oracle_b, subsets[b], BaselineRegime(b), scfg.tau, scfg.epsilon,
                                        scfg.samples_per_slice, scfg.alpha)
            bf_src = store.with_writer(f"brute_b{b}.csv", lambda p: write_agonists_csv(p, bf))
        rep = recall_by_tier([r.neuron for r in records], bf, BaselineRegime(b), scfg.tau, task_id="e2",
                             universe_a=flat, universe_b=flat)
        rep.model_id = "synthetic"
        reports.append(rep)
        regimes_out[str(b)] = {
            "direction": DIRECTION[b],
            "recall": rep.to_dict(),
            "cost": {"group_evaluations": stats.group_evaluations, "singleton_evaluations": oracle_b.query_count,
                     "ratio": stats.group_evaluations / oracle_b.query_count if oracle_b.query_count else None},
            "search": stats.to_dict(),
            "sources": {"cha": cha_src, "brute": bf_src, "recall": "recall.csv"},
        }
    store.with_writer("recall.csv", lambda p: write_recall_csv(p, reports))
    report = _report(store, "e2", cfg, cfg.seed, {"regimes": regimes_out, "reduce": rinfo, "task_source": task_src,
                                                  "n_candidates": len(flat)})
    store.metadata()
    return report


def run_e3(cfg: RunConfig, out=None) -> dict:
    """Spectral against random coverage on one task and splitter."""
    store = ArtifactStore(out)
    pipe = Pipeline(cfg)
    plans = {}
    for kind in ("spectral", "random"):
        plans[kind] = run_condition(pipe, store, kind, "rule", kind)
    rare = set(pipe.world.meta.get("rare_ids", []))
    if rare:
        rules, _ = pipe.splitters()
        rare_plus = {b: rare & set(plus) for b, (plus, _) in pipe.rule_split(rules[0]).items()}
    side = {}
    for kind, res in plans.items():
        regs = {}
        for b, r in res["regimes"].items():
            if "coverage" not in r:
                continue
            sel = set(r["coverage"]["selected_plus"])
            regs[b] = {"diagnostics": r["coverage"]["diagnostics"], "source": r["coverage"]["source"],
                       "rare_in_slice": len(rare_plus[int(b)]) if rare else 0,
                       "rare_sampled": bool(rare_plus[int(b)] & sel) if rare and rare_plus[int(b)] else None}
        side[kind] = {"hq_at_threshold": res["hq_total"][_tkey(cfg.rules.hq_threshold)], "regimes": regs,
                      "source": kind}
    report = _report(store, "e3", cfg, cfg.seed, {"plans": side, "results": plans})
    store.metadata()
    return report


EXPERIMENTS = {"e0": run_e0, "e1": run_e1, "e2": run_e2, "e3": run_e3}
