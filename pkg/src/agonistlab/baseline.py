"""Exhaustive singleton search and tiered recall against it."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import SLICES, AgonistRecord, BaselineRegime, NeuronCoord, SliceTag
from .oracle import BehaviorOracle
from .stats import measured_effect

DEFAULT_EDGES = (0.2, 0.3, 0.5, 1.0)


class ComparisonError(ValueError):
    pass


def brute_force_singletons(
    candidates: Sequence[NeuronCoord],
    oracle: BehaviorOracle,
    eval_subset: Mapping[SliceTag, Sequence[int]],
    regime: BaselineRegime,
    tau: float,
    epsilon: float = 0.2,
    samples_per_slice: int = 64,
    alpha: float = 0.05,
) -> list[AgonistRecord]:
    """One evaluation per candidate on the same fixed subset the search uses."""
    regime = BaselineRegime(regime)
    b = int(regime)
    examples = {s: list(eval_subset[s])[:samples_per_slice] for s in SLICES}
    for s in SLICES:
        if not examples[s]:
            raise ValueError(f"evaluation subset has no examples on slice {s.value}")
    out = []
    for j in candidates:
        res = oracle.query_slices([j], regime, examples)
        xp = int(np.sum(res[SliceTag.ASSOCIATED] != b))
        xm = int(np.sum(res[SliceTag.UNRELATED] != b))
        effect = measured_effect(xp, len(examples[SliceTag.ASSOCIATED]), xm,
                                 len(examples[SliceTag.UNRELATED]), alpha)
        if effect.strength >= tau:
            out.append(AgonistRecord.classify(j, regime, effect, tau, epsilon))
    out.sort(key=lambda r: r.neuron)
    return out


def tier_edges(tau: float = 0.2, edges: Sequence[float] = DEFAULT_EDGES) -> tuple[float, ...]:
    """Fixed tier edges with tau as the lowest edge."""
    inner = [e for e in edges[1:] if e > tau]
    return (tau, *inner)


@dataclass(frozen=True)
class TierCount:
    lo: float
    hi: float
    recovered: int
    total: int

    @property
    def rate(self) -> float | None:
        return self.recovered / self.total if self.total else None

    @property
    def label(self) -> str:
        close = "]" if self.hi >= 1.0 else ")"
        return f"[{self.lo:g},{self.hi:g}{close}"


@dataclass
class RecallReport:
    tiers: list[TierCount]
    recovered: int
    total: int
    regime: BaselineRegime
    task_id: str = ""
    model_id: str = "synthetic"
    cha_only: list[NeuronCoord] = field(default_factory=list)

    @property
    def overall_rate(self) -> float | None:
        return self.recovered / self.total if self.total else None

    def tier(self, lo: float) -> TierCount:
        return next(t for t in self.tiers if abs(t.lo - lo) < 1e-12)

    def to_dict(self) -> dict:
        return {
            "task": self.task_id, "model": self.model_id, "baseline": int(self.regime),
            "recovered": self.recovered, "total": self.total, "overall": self.overall_rate,
            "tiers": [{"bin": t.label, "recovered": t.recovered, "total": t.total,
                       "rate": t.rate} for t in self.tiers],
            "cha_only": [str(c) for c in self.cha_only],
        }


def _fmt(recovered: int, total: int) -> str:
    if not total:
        return f"{recovered}/0 (undefined)"
    return f"{recovered}/{total} ({100 * recovered / total:.1f}%)"


def _coords(items: Iterable) -> set[NeuronCoord]:
    return {r.neuron if isinstance(r, AgonistRecord) else r for r in items}


def recall_by_tier(
    cha_set: Iterable,
    bf_records: Sequence[AgonistRecord],
    regime: BaselineRegime = BaselineRegime.POSITIVE,
    tau: float = 0.2,
    edges: Sequence[float] | None = None,
    task_id: str = "",
    universe_a: Iterable[NeuronCoord] | None = None,
    universe_b: Iterable[NeuronCoord] | None = None,
) -> RecallReport:
    """Recall of brute-force agonists by the search, binned by brute-force strength.

    Neurons the search found but brute force did not are listed in
    ``cha_only`` and never counted as recall. Empty tiers have undefined rate.
    """
    if universe_a is not None and universe_b is not None and set(universe_a) != set(universe_b):
        raise ComparisonError("searches ran over different candidate universes")
    found = _coords(cha_set)
    bf = {r.neuron: r.strength for r in bf_records}
    cuts = tuple(edges) if edges is not None else tier_edges(tau)
    tiers = []
    for i, (lo, hi) in enumerate(zip(cuts[:-1], cuts[1:])):
        last = i == len(cuts) - 2
        members = [j for j, e in bf.items() if lo <= e < hi or (last and e == hi)]
        tiers.append(TierCount(lo, hi, sum(j in found for j in members), len(members)))
    return RecallReport(
        tiers=tiers,
        recovered=sum(j in found for j in bf),
        total=len(bf),
        regime=BaselineRegime(regime),
        task_id=task_id,
        cha_only=sorted(found - set(bf)),
    )


def write_recall_csv(path, reports: Sequence[RecallReport]) -> None:
    width = max((len(r.tiers) for r in reports), default=0)
    labels = [t.label for t in reports[0].tiers] if reports else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "model", "baseline", "overall"] + labels[:width])
        for r in reports:
            w.writerow([r.task_id, r.model_id, "positive" if r.regime else "negative",
                        _fmt(r.recovered, r.total)] + [_fmt(t.recovered, t.total) for t in r.tiers])
