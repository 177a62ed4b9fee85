"""Candidate reduction: ranked neuron coordinates and per-layer retention."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .core import BaselineRegime, NeuronCoord
from .oracle import SyntheticTask, ground_truth_agonists


class Surrogate(Protocol):
    """Differentiable scalar objective over an activation vector."""

    def __call__(self, h: np.ndarray) -> float: ...

    def grad(self, h: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class LinearSurrogate:
    w: np.ndarray

    def __call__(self, h):
        return float(np.dot(self.w, h))

    def grad(self, h):
        return np.broadcast_to(np.asarray(self.w, dtype=float), np.shape(h)).copy()


@dataclass(frozen=True)
class QuadraticSurrogate:
    """L(h) = h^T A h / 2 + b^T h with symmetric A."""

    A: np.ndarray
    b: np.ndarray

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        return float(0.5 * h @ self.A @ h + self.b @ h)

    def grad(self, h):
        return np.asarray(h, dtype=float) @ self.A + self.b

    def exact_ig(self, h_plus, h_minus) -> np.ndarray:
        """Closed-form path integral along the straight line, per coordinate."""
        d = np.asarray(h_plus, float) - np.asarray(h_minus, float)
        mid = np.asarray(h_minus, float) + 0.5 * d
        return d * (mid @ self.A + self.b)


@dataclass(frozen=True)
class SoftplusSurrogate:
    """L(h) = log(1 + exp(w.h + c)); smooth and non-polynomial."""

    w: np.ndarray
    c: float = 0.0

    def __call__(self, h):
        return float(np.logaddexp(0.0, np.dot(self.w, h) + self.c))

    def grad(self, h):
        z = np.asarray(h, dtype=float) @ self.w + self.c
        s = 1.0 / (1.0 + np.exp(-z))
        return np.multiply.outer(s, self.w) if np.ndim(z) else s * np.asarray(self.w, float)


def ig_surrogate_score(surrogate: Surrogate, h_plus, h_minus, steps: int = 20) -> np.ndarray:
    """Integrated gradients from h- to h+ by an S-step midpoint rule, averaged over pairs.

    ``h_plus`` and ``h_minus`` are (pairs, d) arrays or single d-vectors.
    """
    hp = np.atleast_2d(np.asarray(h_plus, dtype=float))
    hm = np.atleast_2d(np.asarray(h_minus, dtype=float))
    if hp.shape != hm.shape:
        raise ValueError(f"shape mismatch {hp.shape} vs {hm.shape}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    delta = hp - hm
    total = np.zeros(hp.shape[1])
    for p in range(hp.shape[0]):
        acc = np.zeros(hp.shape[1])
        for s in range(steps):
            a = (s + 0.5) / steps
            acc += surrogate.grad(hm[p] + a * delta[p])
        total += acc * delta[p] / steps
    return total / hp.shape[0]


@dataclass
class CandidateRanking:
    coords: list[NeuronCoord]
    scores: np.ndarray
    scorer: str = "unknown"
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.coords) != len(self.scores):
            raise ValueError("one score per coordinate")
        order = sorted(range(len(self.coords)), key=lambda i: (-abs(float(self.scores[i])), self.coords[i]))
        self.coords = [self.coords[i] for i in order]
        self.scores = np.asarray(self.scores, dtype=float)[order]

    def __len__(self) -> int:
        return len(self.coords)


def retain_top(
    ranking: CandidateRanking,
    M: int,
    element_filter: Callable[[NeuronCoord], bool] | None = None,
) -> dict[int, list[NeuronCoord]]:
    """Filter, keep the top ``M`` by |score|, then group by layer in rank order."""
    if M < 1:
        raise ValueError("M must be >= 1")
    kept = [c for c in ranking.coords if element_filter is None or element_filter(c)][:M]
    out: dict[int, list[NeuronCoord]] = {}
    for c in kept:
        out.setdefault(c.layer, []).append(c)
    return dict(sorted(out.items()))


@dataclass
class ReducerResult:
    retained: dict[int, list[NeuronCoord]]
    dropped: list[NeuronCoord]
    planted: list[NeuronCoord]

    @property
    def retained_set(self) -> set[NeuronCoord]:
        return {c for cs in self.retained.values() for c in cs}


def ground_truth_reducer(
    task: SyntheticTask,
    M: int,
    leak_rate: float = 0.0,
    seed: int = 0,
    tau: float = 0.2,
    regimes: Sequence[BaselineRegime] | None = None,
) -> ReducerResult:
    """Keep the planted tau-agonists minus a seeded ``leak_rate`` share, padded with background to ``M``.

    The number dropped is ``round(leak_rate * k)`` with halves rounded up.
    """
    if not 0.0 <= leak_rate <= 1.0:
        raise ValueError("leak_rate must lie in [0, 1]")
    if regimes is None:
        regimes = sorted({b for b, _ in task.examples})
    planted = sorted({c for b in regimes for c in ground_truth_agonists(task, tau, b)})
    rng = np.random.default_rng(seed)
    n_drop = int(math.floor(leak_rate * len(planted) + 0.5))
    drop_idx = set(rng.choice(len(planted), n_drop, replace=False).tolist()) if n_drop else set()
    dropped = [planted[i] for i in sorted(drop_idx)]
    kept = [c for i, c in enumerate(planted) if i not in drop_idx]
    universe = [c for cs in task.candidate_universe().values() for c in cs]
    excluded = set(planted)
    background = [c for c in universe if c not in excluded]
    pad = max(0, M - len(kept))
    pad = min(pad, len(background))
    fill = [background[i] for i in sorted(rng.choice(len(background), pad, replace=False))] if pad else []
    out: dict[int, list[NeuronCoord]] = {}
    for c in sorted(kept + fill):
        out.setdefault(c.layer, []).append(c)
    return ReducerResult(dict(sorted(out.items())), dropped, planted)


def task_surrogate_ranking(
    task: SyntheticTask,
    regime: BaselineRegime = BaselineRegime.POSITIVE,
    n_pairs: int = 8,
    steps: int = 20,
    noise: float = 0.02,
    seed: int = 0,
) -> CandidateRanking:
    """IG ranking from a softplus surrogate whose weights are the neurons' true strengths plus noise.

    Activation pairs are random with h+ - h- > 0, so planted agonists
    outscore background once their strength exceeds the noise scale.
    """
    coords = [c for cs in task.candidate_universe().values() for c in cs]
    rng = np.random.default_rng(seed)
    w = np.array([task.exact_strength([c], regime) for c in coords]) + noise * rng.standard_normal(len(coords))
    hm = rng.standard_normal((n_pairs, len(coords))) * 0.1
    hp = hm + rng.uniform(0.5, 1.5, size=hm.shape)
    scores = ig_surrogate_score(SoftplusSurrogate(w), hp, hm, steps)
    return CandidateRanking(coords, scores, "ig-softplus", {"n_pairs": n_pairs, "steps": steps, "noise": noise, "seed": seed})


def write_rankings_csv(path, ranking: CandidateRanking, retained: Mapping[int, Sequence[NeuronCoord]]) -> None:
    keep = {c for cs in retained.values() for c in cs}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coord", "score", "retained", "scorer"])
        for c, s in zip(ranking.coords, ranking.scores):
            w.writerow([str(c), repr(float(s)), int(c in keep), ranking.scorer])


def read_rankings_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"coord": NeuronCoord.parse(r["coord"]), "score": float(r["score"]),
             "retained": r["retained"] == "1", "scorer": r["scorer"]}
            for r in csv.DictReader(fh)
        ]
