"""Spectral compression and representative sampling for evaluation subsets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

_POWER_ITERS = 5000
_POWER_TOL = 1e-13


@dataclass
class PCAResult:
    embedding: np.ndarray
    projected: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    warning: str | None = None


def _top_eigenvectors(cov: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Leading eigenpairs by power iteration with deflation.

    Each iterate is re-orthogonalized against the vectors already found, so
    the returned set stays orthonormal even for clustered eigenvalues.
    """
    d = cov.shape[0]
    scale = max(np.trace(cov), 1e-300)
    work = cov.copy()
    vecs: list[np.ndarray] = []
    vals: list[float] = []
    for i in range(k):
        v = np.ones(d) + np.arange(d) / d
        basis = np.array(vecs) if vecs else np.zeros((0, d))
        v -= basis.T @ (basis @ v)
        if np.linalg.norm(v) == 0:
            break
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(_POWER_ITERS):
            w = work @ v
            w -= basis.T @ (basis @ w)
            norm = np.linalg.norm(w)
            if norm <= _POWER_TOL * scale:
                lam = 0.0
                break
            w /= norm
            lam = float(w @ work @ w)
            if np.linalg.norm(work @ w - lam * w) <= _POWER_TOL * scale:
                v = w
                break
            v = w
        if lam <= 1e-12 * scale:
            break
        vecs.append(v)
        vals.append(lam)
        work = work - lam * np.outer(v, v)
    return np.array(vals), np.array(vecs).reshape(len(vecs), d)


def pca_embed(matrix, d_pca: int) -> PCAResult:
    """Project onto the top principal directions, then scale rows to unit norm.

    Each component's sign is fixed so its largest-magnitude loading is
    positive. If the data has rank below ``d_pca`` fewer components are
    returned and ``warning`` says so.
    """
    X = np.asarray(matrix, dtype=float)
    n, d_e = X.shape
    if n < 2:
        raise ValueError("PCA needs at least two rows")
    if d_pca < 1 or d_pca > min(n, d_e):
        raise ValueError(f"d_pca={d_pca} outside [1, {min(n, d_e)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    vals, comps = _top_eigenvectors(cov, d_pca)
    for i in range(len(comps)):
        if comps[i][np.argmax(np.abs(comps[i]))] < 0:
            comps[i] = -comps[i]
    warning = None
    if len(comps) < d_pca:
        warning = f"rank {len(comps)} below requested d_pca={d_pca}"
    projected = Xc @ comps.T
    norms = np.linalg.norm(projected, axis=1, keepdims=True)
    embedding = np.divide(projected, norms, out=np.zeros_like(projected), where=norms > 0)
    total = np.trace(cov)
    ratio = vals / total if total > 0 else np.zeros_like(vals)
    return PCAResult(embedding, projected, comps, mean, vals, ratio, warning)


class SpectralEmbedding(TransformerMixin, BaseEstimator):
    """PCA to ``d_pca`` dimensions followed by unit-norm row scaling."""

    def __init__(self, d_pca=64):
        self.d_pca = d_pca

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        res = pca_embed(X, min(self.d_pca, *X.shape))
        self.components_ = res.components
        self.mean_ = res.mean
        self.explained_variance_ = res.explained_variance
        self.explained_variance_ratio_ = res.explained_variance_ratio
        self.warning_ = res.warning
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=float)
        p = (X - self.mean_) @ self.components_.T
        norms = np.linalg.norm(p, axis=1, keepdims=True)
        return np.divide(p, norms, out=np.zeros_like(p), where=norms > 0)


def _nearest(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = np.sqrt(np.maximum(((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1), 0.0))
    idx = np.argmin(d, axis=1)
    return idx, d[np.arange(len(points)), idx]


def greedy_k_center(points, K: int, seed: int | None = None) -> tuple[list[int], np.ndarray, float]:
    """Farthest-first traversal.

    The first center is the point farthest from the mean, or a seeded random
    point when ``seed`` is given. Returns (center row indices, nearest-center
    assignment as an index into the centers, covering radius).
    """
    P = np.asarray(points, dtype=float)
    n = len(P)
    if not 1 <= K <= n:
        raise ValueError(f"K={K} must lie in [1, {n}]")
    if seed is None:
        first = int(np.argmax(np.linalg.norm(P - P.mean(axis=0), axis=1)))
    else:
        first = int(np.random.default_rng(seed).integers(n))
    centers = [first]
    mind = np.linalg.norm(P - P[first], axis=1)
    assign = np.zeros(n, dtype=np.int64)
    for c in range(1, K):
        nxt = int(np.argmax(mind))
        centers.append(nxt)
        dn = np.linalg.norm(P - P[nxt], axis=1)
        closer = dn < mind
        assign[closer] = c
        mind = np.where(closer, dn, mind)
    return centers, assign, float(mind.max())


def covering_radius(points, center_rows: Sequence[int]) -> float:
    P = np.asarray(points, dtype=float)
    return float(_nearest(P, P[list(center_rows)])[1].max())


class KCenter(ClusterMixin, BaseEstimator):
    """Greedy k-center clustering (farthest-first traversal)."""

    def __init__(self, n_clusters=100, seed=None):
        self.n_clusters = n_clusters
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        k = min(self.n_clusters, len(X))
        self.center_indices_, self.labels_, self.radius_ = greedy_k_center(X, k, self.seed)
        self.cluster_centers_ = X[self.center_indices_]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return _nearest(check_array(X, dtype=float), self.cluster_centers_)[0]


def select_representatives(
    slice_ids: Sequence[int],
    assignment: Mapping[int, int],
    points: Mapping[int, np.ndarray],
    n_sel: int,
    seed: int = 0,
) -> list[int]:
    """At most one medoid per occupied cluster, largest clusters first, then a seeded uniform fill."""
    ids = list(slice_ids)
    if not ids:
        raise ValueError("empty slice")
    if n_sel >= len(ids):
        return sorted(ids)
    members: dict[int, list[int]] = {}
    for e in ids:
        members.setdefault(int(assignment[e]), []).append(e)
    order = sorted(members, key=lambda c: (-len(members[c]), c))
    chosen: list[int] = []
    for c in order:
        if len(chosen) >= n_sel:
            break
        group = sorted(members[c])
        P = np.array([points[e] for e in group])
        dist = np.sqrt(((P[:, None, :] - P[None, :, :]) ** 2).sum(-1)).sum(axis=1)
        chosen.append(group[int(np.argmin(dist))])
    if len(chosen) < n_sel:
        rest = sorted(set(ids) - set(chosen))
        rng = np.random.default_rng(seed)
        chosen += [rest[i] for i in rng.choice(len(rest), n_sel - len(chosen), replace=False)]
    return chosen


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]
    relaxed: list[int]
    truncated: bool


def match_controls(
    selected_plus: Sequence[int],
    pool_minus: Sequence[int],
    points: Mapping[int, np.ndarray],
    lengths: Mapping[int, float] | None = None,
    tolerance: float = 0.2,
) -> MatchResult:
    """Greedy nearest unrelated partner per associated example, without replacement.

    Candidates must satisfy a relative length tolerance; when none does the
    unconstrained nearest is used and the associated id is listed in ``relaxed``.
    """
    pool = sorted(pool_minus)
    if not pool:
        raise ValueError("empty control pool")
    available = np.ones(len(pool), dtype=bool)
    Q = np.array([points[e] for e in pool])
    pairs, relaxed = [], []
    for a in sorted(selected_plus):
        if not available.any():
            break
        dist = np.linalg.norm(Q - points[a], axis=1)
        ok = available.copy()
        if lengths is not None:
            la = lengths[a]
            lb = np.array([lengths[e] for e in pool])
            ok &= np.abs(lb - la) <= tolerance * np.maximum(np.maximum(lb, la), 1e-12)
            if not ok.any():
                ok = available.copy()
                relaxed.append(a)
        cand = np.where(ok, dist, np.inf)
        pick = int(np.argmin(cand))
        pairs.append((a, pool[pick]))
        available[pick] = False
    return MatchResult(pairs, relaxed, len(pairs) < len(selected_plus))


def coverage_diagnostics(points, centers, radius: float) -> dict:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    if C.size == 0:
        raise ValueError("no centers")
    _, d = _nearest(P, C)
    return {
        "radius": float(radius),
        "fraction_within": float(np.mean(d <= radius)),
        "q50": float(np.quantile(d, 0.5)),
        "q90": float(np.quantile(d, 0.9)),
        "q99": float(np.quantile(d, 0.99)),
        "max": float(d.max()),
    }


@dataclass
class CoveragePlan:
    kind: str
    selected: dict[str, list[int]]
    pairs: list[tuple[int, int]]
    diagnostics: dict
    seeds: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def eval_subset(self):
        from .core import SliceTag

        return {SliceTag.ASSOCIATED: list(self.selected["+"]), SliceTag.UNRELATED: list(self.selected["-"])}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "seeds": self.seeds,
            "selected": {k: list(map(int, v)) for k, v in sorted(self.selected.items())},
            "pairs": [[int(a), int(b)] for a, b in self.pairs],
            "diagnostics": self.diagnostics, "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "CoveragePlan":
        return cls(d["kind"], {k: list(v) for k, v in d["selected"].items()},
                   [tuple(p) for p in d["pairs"]], d["diagnostics"], d.get("seeds", {}), d.get("meta", {}))


@dataclass(frozen=True)
class CoverageConfig:
    d_pca: int = 64
    n_clusters: int = 100
    n_sel: int = 50
    radius: float = 0.5
    length_tolerance: float = 0.2


def _plan_diagnostics(points, plus, minus, selected_plus, selected_minus, radius) -> dict:
    out = {}
    for tag, full, sel in (("+", plus, selected_plus), ("-", minus, selected_minus)):
        if full and sel:
            out[tag] = coverage_diagnostics([points[e] for e in full], [points[e] for e in sel], radius)
    return out


def spectral_plan(
    embedding: np.ndarray,
    ids: Sequence[int],
    plus_ids: Sequence[int],
    minus_ids: Sequence[int],
    config: CoverageConfig = CoverageConfig(),
    lengths: Mapping[int, float] | None = None,
    seed: int = 0,
) -> CoveragePlan:
    """Medoid representatives of D+ over global k-center clusters, plus matched D- controls."""
    E = np.asarray(embedding, dtype=float)
    d = min(config.d_pca, *E.shape)
    pca = pca_embed(E, d)
    pts = pca.embedding
    k = min(config.n_clusters, len(pts))
    _, assign, radius = greedy_k_center(pts, k)
    row = {int(e): i for i, e in enumerate(ids)}
    points = {int(e): pts[i] for e, i in row.items()}
    assignment = {int(e): int(assign[i]) for e, i in row.items()}
    sel = select_representatives(plus_ids, assignment, points, config.n_sel, seed)
    match = match_controls(sel, minus_ids, points, lengths, config.length_tolerance)
    sel_minus = [b for _, b in match.pairs]
    return CoveragePlan(
        kind="spectral",
        selected={"+": sorted(sel), "-": sorted(sel_minus)},
        pairs=match.pairs,
        diagnostics=_plan_diagnostics(points, plus_ids, minus_ids, sel, sel_minus, config.radius),
        seeds={"fill": seed},
        meta={"global_radius": radius, "n_clusters": k, "d_pca": pts.shape[1],
              "pca_warning": pca.warning, "relaxed": match.relaxed, "truncated": match.truncated},
    )


def random_plan(
    embedding: np.ndarray,
    ids: Sequence[int],
    plus_ids: Sequence[int],
    minus_ids: Sequence[int],
    config: CoverageConfig = CoverageConfig(),
    lengths: Mapping[int, float] | None = None,
    seed: int = 0,
) -> CoveragePlan:
    """Uniform D+ sample (seeded) with controls matched as in the spectral plan."""
    plus = sorted(plus_ids)
    n_sel = min(config.n_sel, len(plus))
    sel = sorted(plus[i] for i in np.random.default_rng(seed).choice(len(plus), n_sel, replace=False))
    E = np.asarray(embedding, dtype=float)
    pts = pca_embed(E, min(config.d_pca, *E.shape)).embedding
    points = {int(e): pts[i] for i, e in enumerate(ids)}
    match = match_controls(sel, minus_ids, points, lengths, config.length_tolerance)
    sel_minus = [b for _, b in match.pairs]
    return CoveragePlan(
        kind="random",
        selected={"+": sel, "-": sorted(sel_minus)},
        pairs=match.pairs,
        diagnostics=_plan_diagnostics(points, plus_ids, minus_ids, sel, sel_minus, config.radius),
        seeds={"sample": seed},
        meta={"relaxed": match.relaxed, "truncated": match.truncated},
    )


def sample_uniform(slice_ids: Sequence[int], n_sel: int, seed: int) -> list[int]:
    """The uniform draw used by :func:`random_plan`."""
    ids = sorted(slice_ids)
    if n_sel > len(ids):
        raise ValueError("n_sel exceeds the slice size")
    return sorted(ids[i] for i in np.random.default_rng(seed).choice(len(ids), n_sel, replace=False))
