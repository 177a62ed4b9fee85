"""Synthetic examples with predicates, embeddings, baseline labels and planted flip sets.

A world plays the part of a model plus dataset: every neuron's singleton
flip set is a fixed set of example ids within one baseline regime, and a
task is obtained by cutting those sets along a (D+, D-) split.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..core import SLICES, BaselineRegime, NeuronCoord, SliceTag
from ..oracle import SyntheticTask
from ..rules import PredicateMatrix, RuleSet, parse_rule
from .config import WorldConfig

WORLD_FORMAT = "agonistlab.world"


@dataclass
class PlantedNeuron:
    coord: NeuronCoord
    regime: int
    kind: str
    rule: str | None
    flips: list[int]


@dataclass
class World:
    config: dict
    seed: int
    matrix: PredicateMatrix
    embedding: np.ndarray
    lengths: np.ndarray
    baseline: np.ndarray
    layer_widths: tuple[int, ...]
    neurons: list[PlantedNeuron]
    latent_cluster: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def ids(self) -> np.ndarray:
        return self.matrix.ids

    def regime_ids(self, regime) -> list[int]:
        b = int(regime)
        return [int(e) for e, y in zip(self.ids, self.baseline) if int(y) == b]

    def flip_sets(self, regime) -> dict[NeuronCoord, set[int]]:
        b = int(regime)
        out: dict[NeuronCoord, set[int]] = {}
        for n in self.neurons:
            if n.regime == b:
                out.setdefault(n.coord, set()).update(n.flips)
        return out

    def planted(self, regime, kinds=("agonist", "repair")) -> list[PlantedNeuron]:
        return [n for n in self.neurons if n.regime == int(regime) and n.kind in kinds]

    def task_for_split(self, splits: Mapping[int, tuple[Sequence[int], Sequence[int]]], noise: float = 0.0,
                       seed: int = 0) -> SyntheticTask:
        """Task whose slices are the given (D+, D-) per regime."""
        examples, flips = {}, {}
        for b, (plus, minus) in splits.items():
            regime = BaselineRegime(b)
            table = self.flip_sets(regime)
            for s, ids in ((SliceTag.ASSOCIATED, plus), (SliceTag.UNRELATED, minus)):
                examples[(regime, s)] = tuple(sorted(int(e) for e in ids))
                flips[(regime, s)] = table
        return SyntheticTask.from_flip_sets(
            self.layer_widths, examples, flips,
            noise={s: noise for s in SLICES} if noise else {},
            seed=seed, meta={"source": "world", "world_seed": self.seed},
        )

    # -- persistence -------------------------------------------------------------

    def to_dict(self) -> dict:
        m = self.matrix
        return {
            "format": WORLD_FORMAT, "version": 1, "seed": self.seed, "config": self.config,
            "columns": {"names": list(m.names), "kinds": list(m.kinds),
                        "provenance": list(m.provenance), "observable": list(m.observable)},
            "ids": m.ids.tolist(),
            "values": m.values.tolist(),
            "embedding": self.embedding.tolist(),
            "lengths": self.lengths.tolist(),
            "baseline": self.baseline.astype(int).tolist(),
            "latent_cluster": self.latent_cluster.astype(int).tolist(),
            "layer_widths": list(self.layer_widths),
            "neurons": [{"coord": str(n.coord), "regime": n.regime, "kind": n.kind,
                         "rule": n.rule, "flips": sorted(n.flips)} for n in self.neurons],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "World":
        if d.get("format") != WORLD_FORMAT:
            raise ValueError("not a world manifest")
        c = d["columns"]
        matrix = PredicateMatrix(tuple(c["names"]), np.array(d["values"], dtype=float), tuple(c["kinds"]),
                                 tuple(c["provenance"]), tuple(bool(x) for x in c["observable"]),
                                 np.array(d["ids"]))
        neurons = [PlantedNeuron(NeuronCoord.parse(n["coord"]), int(n["regime"]), n["kind"], n["rule"],
                                 list(n["flips"])) for n in d["neurons"]]
        return cls(d["config"], int(d["seed"]), matrix, np.array(d["embedding"], dtype=float),
                   np.array(d["lengths"], dtype=float), np.array(d["baseline"], dtype=int),
                   tuple(d["layer_widths"]), neurons, np.array(d["latent_cluster"], dtype=int), d.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "World":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _assoc_rule(cfg: WorldConfig) -> RuleSet:
    return parse_rule("IF " + " OR ".join(f"({x})" for x in cfg.assoc_literals) + " THEN fire")


def _mechanism_rule(cfg: WorldConfig, j: int, lit: str) -> str:
    if cfg.plantable:
        return f"IF ({lit}) THEN fire"
    return f"IF ({cfg.assoc_literals[j % len(cfg.assoc_literals)]} AND {lit}) THEN fire"


def make_world(cfg: WorldConfig, seed: int) -> World:
    """Sample a world.

    Baseline labels are Bernoulli with a higher success rate where the
    association rule (an OR of ``assoc_literals``) fires. Each regime-1
    agonist flips the baseline-1 examples satisfying its mechanism rule (one
    association literal AND a private literal); regime-0 repair neurons do
    the same inside baseline-0 with a negated literal. Private columns have
    rates drawn from ``private_rate_range``, which spreads agonist strengths. ``flip_noise`` toggles each
    in-regime membership independently.
    """
    rng = np.random.default_rng(seed)
    n = cfg.n_examples
    names_b = [f"b{i}" for i in range(cfg.n_bool)]
    lo, hi = cfg.private_rate_range
    rates = np.array([cfg.bool_rate if c in cfg.assoc_literals else rng.uniform(lo, hi) for c in names_b])
    bools = (rng.random((n, cfg.n_bool)) < rates).astype(float)
    reals = rng.standard_normal((n, cfg.n_real))
    names = [f"b{i}" for i in range(cfg.n_bool)] + [f"r{i}" for i in range(cfg.n_real)]
    values = np.hstack([bools, reals])
    kinds = ("bool",) * cfg.n_bool + ("real",) * cfg.n_real
    matrix = PredicateMatrix(tuple(names), values, kinds, ("seed",) * len(names), (True,) * len(names), np.arange(n))

    assoc = _assoc_rule(cfg).fires(matrix)
    p = np.where(assoc, cfg.p_base_assoc, cfg.p_base_other)
    baseline = (rng.random(n) < p).astype(int)

    # embedding: latent cluster center + linear image of predicates + noise
    k = max(1, cfg.n_latent_clusters)
    cluster = rng.integers(0, k, size=n)
    centers = rng.normal(0.0, 2.0, size=(k + 1, cfg.d_embed))
    rare = np.zeros(n, dtype=bool)
    if cfg.rare_cluster_size:
        rare_idx = rng.choice(n, cfg.rare_cluster_size, replace=False)
        rare[rare_idx] = True
        cluster[rare] = k
        centers[k] = centers[:k].mean(axis=0) + 12.0 * np.eye(cfg.d_embed)[0]
    W = rng.normal(0.0, 1.0, size=(values.shape[1], cfg.d_embed))
    embedding = centers[cluster] + values @ W * 0.5 + cfg.embed_noise * rng.standard_normal((n, cfg.d_embed))
    lengths = 10.0 + rng.poisson(20, size=n) + 5.0 * cluster

    coords_all = [NeuronCoord(layer, c) for layer, w in enumerate(cfg.layer_widths) for c in range(w)]
    n_needed = cfg.n_agonists + cfg.n_repair + cfg.n_background + cfg.n_catastrophic
    if n_needed > len(coords_all):
        raise ValueError("more planted neurons than coordinates")
    picks = [coords_all[i] for i in rng.choice(len(coords_all), n_needed, replace=False)]
    free = [f"b{i}" for i in range(cfg.n_bool) if f"b{i}" not in cfg.assoc_literals] or [names[0]]

    def member(rule_text: str, b: int) -> list[int]:
        fired = parse_rule(rule_text).fires(matrix) & (baseline == b)
        if cfg.flip_noise:
            toggle = (rng.random(n) < cfg.flip_noise) & (baseline == b)
            fired = fired ^ toggle
        return [int(e) for e in np.flatnonzero(fired)]

    neurons: list[PlantedNeuron] = []
    it = iter(picks)
    for j in range(cfg.n_agonists):
        rule = _mechanism_rule(cfg, j, free[j % len(free)])
        neurons.append(PlantedNeuron(next(it), 1, "agonist", rule, member(rule, 1)))
    for j in range(cfg.n_repair):
        rule = _mechanism_rule(cfg, j, f"NOT {free[(j + cfg.n_agonists) % len(free)]}")
        neurons.append(PlantedNeuron(next(it), 0, "repair", rule, member(rule, 0)))
    for j in range(cfg.n_background):
        b = j % 2
        pool = np.flatnonzero(baseline == b)
        size = int(rng.binomial(len(pool), cfg.background_rate)) if len(pool) else 0
        flips = sorted(int(e) for e in rng.choice(pool, size, replace=False)) if size else []
        neurons.append(PlantedNeuron(next(it), b, "background", None, flips))
    for _ in range(cfg.n_catastrophic):
        neurons.append(PlantedNeuron(next(it), 1, "catastrophic", None,
                                     [int(e) for e in np.flatnonzero(baseline == 1)]))

    return World(asdict(cfg), int(seed), matrix, embedding, lengths, baseline, tuple(cfg.layer_widths),
                 neurons, cluster, {"rare_ids": [int(e) for e in np.flatnonzero(rare)],
                                    "assoc_rate": float(assoc.mean()),
                                    "column_rates": [float(r) for r in rates]})
