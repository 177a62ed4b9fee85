"""Splitter and anchored rule extraction over boolean/threshold predicates.

Clauses are conjunctions of literals; a rule set fires when any clause
fires. Clause pools come from a deterministic enumerator (single-column
thresholds, then beam-limited conjunctions) and rule sets are composed by
greedy OR-inclusion maximizing validation MCC.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .core import SLICES, BaselineRegime, NeuronCoord, SliceTag
from .stats import ConfusionCounts, mcc

SPLITS = ("train", "validation", "test")
ROLES = ("splitter", "anchored-1->0", "anchored-0->1", "fake-control")
_NAME_RE = r"[A-Za-z_][A-Za-z0-9_.]*"


class ExtractionError(ValueError):
    pass


class RegimeEmptyError(ValueError):
    pass


class GateIneligibleError(ValueError):
    pass


class RuleSyntaxError(ValueError):
    pass


@dataclass
class PredicateMatrix:
    """Named predicate columns over examples.

    ``observable`` marks columns computable from the prompt alone; columns
    derived from the baseline output are not gate-eligible.
    """

    names: tuple[str, ...]
    values: np.ndarray
    kinds: tuple[str, ...]
    provenance: tuple[str, ...]
    observable: tuple[bool, ...]
    ids: np.ndarray
    split: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.names = tuple(self.names)
        self.values = np.asarray(self.values, dtype=float)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        n, p = self.values.shape
        if len(set(self.names)) != len(self.names):
            raise ValueError("column names must be unique")
        for name in self.names:
            if not re.fullmatch(_NAME_RE, name):
                raise ValueError(f"invalid column name {name!r}")
        if not (len(self.names) == len(self.kinds) == len(self.provenance) == len(self.observable) == p):
            raise ValueError("column metadata does not match the matrix width")
        if len(self.ids) != n or len(np.unique(self.ids)) != n:
            raise ValueError("example ids must be unique and match the row count")
        if any(k not in ("bool", "real") for k in self.kinds):
            raise ValueError("column kinds must be 'bool' or 'real'")
        if self.split is not None:
            self.split = np.asarray(self.split, dtype=object)
            if len(self.split) != n or not set(self.split) <= set(SPLITS):
                raise ValueError("split tags must cover every row with train/validation/test")
        self._row = {int(e): i for i, e in enumerate(self.ids)}
        self._col = {c: i for i, c in enumerate(self.names)}

    @classmethod
    def from_array(cls, X, names=None, observable=True) -> "PredicateMatrix":
        X = np.asarray(X, dtype=float)
        p = X.shape[1]
        names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(p))
        kinds = tuple("bool" if np.isin(X[:, i], (0.0, 1.0)).all() else "real" for i in range(p))
        return cls(names, X, kinds, ("seed",) * p, (bool(observable),) * p, np.arange(len(X)))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self._col[name]]

    def column_index(self, name: str) -> int:
        if name not in self._col:
            raise KeyError(f"unknown column {name!r}")
        return self._col[name]

    def rows(self, ids: Sequence[int]) -> np.ndarray:
        return np.fromiter((self._row[int(e)] for e in ids), dtype=np.int64, count=len(ids))

    def subset(self, ids: Sequence[int]) -> "PredicateMatrix":
        r = self.rows(ids)
        return replace(self, values=self.values[r], ids=self.ids[r],
                       split=None if self.split is None else self.split[r])

    def with_split(self, split) -> "PredicateMatrix":
        return replace(self, split=np.asarray(split, dtype=object))

    def mask(self, *splits: str) -> np.ndarray:
        if self.split is None:
            return np.ones(self.n_rows, dtype=bool) if "train" in splits else np.zeros(self.n_rows, bool)
        return np.isin(self.split, splits)


@dataclass(frozen=True)
class Literal:
    column: str
    op: str
    value: float | bool

    def __post_init__(self) -> None:
        if self.op not in (">=", "<=", "="):
            raise ValueError(f"unknown comparator {self.op!r}")
        if isinstance(self.value, bool) and self.op != "=":
            raise ValueError("boolean literals use '='")

    def evaluate(self, matrix: PredicateMatrix) -> np.ndarray:
        col = matrix.column(self.column)
        if isinstance(self.value, bool):
            return (col != 0) == self.value
        if self.op == ">=":
            return col >= self.value
        if self.op == "<=":
            return col <= self.value
        return col == self.value

    def to_text(self) -> str:
        if isinstance(self.value, bool):
            return self.column if self.value else f"NOT {self.column}"
        return f"{self.column} {self.op} {float(self.value)!r}"

    def to_dict(self) -> dict:
        return {"column": self.column, "op": self.op, "value": self.value}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Literal":
        v = d["value"]
        return cls(d["column"], d["op"], v if isinstance(v, bool) else float(v))


@dataclass(frozen=True)
class RuleClause:
    literals: tuple[Literal, ...]

    def __post_init__(self) -> None:
        if not self.literals:
            raise ValueError("a clause needs at least one literal")

    @property
    def depth(self) -> int:
        return len(self.literals)

    def evaluate(self, matrix: PredicateMatrix) -> np.ndarray:
        out = np.ones(matrix.n_rows, dtype=bool)
        for lit in self.literals:
            out &= lit.evaluate(matrix)
        return out

    def to_text(self) -> str:
        return "(" + " AND ".join(lit.to_text() for lit in self.literals) + ")"

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(lit.column for lit in self.literals)


@dataclass(frozen=True)
class RuleSet:
    clauses: tuple[RuleClause, ...]
    role: str = "splitter"
    confusion: Mapping[str, ConfusionCounts] = field(default_factory=dict)
    mcc: Mapping[str, float] = field(default_factory=dict)
    gate_eligible: bool | None = None

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown rule role {self.role!r}")

    def fires(self, matrix: PredicateMatrix) -> np.ndarray:
        out = np.zeros(matrix.n_rows, dtype=bool)
        for c in self.clauses:
            out |= c.evaluate(matrix)
        return out

    @property
    def columns(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for c in self.clauses:
            for name in c.columns:
                seen.setdefault(name)
        return tuple(seen)

    @property
    def n_literals(self) -> int:
        return sum(c.depth for c in self.clauses)

    def scored(self, matrix: PredicateMatrix, labels, splits: Sequence[str]) -> "RuleSet":
        """Copy with confusion counts and MCC on each named split of ``matrix``."""
        y = np.asarray(labels, dtype=bool)
        fired = self.fires(matrix)
        conf = dict(self.confusion)
        scores = dict(self.mcc)
        for s in splits:
            m = matrix.mask(s)
            if not m.any():
                continue
            c = ConfusionCounts.from_predictions(y[m], fired[m])
            conf[s], scores[s] = c, mcc(c)
        eligible = all(matrix.observable[matrix.column_index(c)] for c in self.columns)
        return replace(self, confusion=conf, mcc=scores, gate_eligible=eligible)

    def to_text(self) -> str:
        if not self.clauses:
            return "IF false THEN fire"
        return "IF " + " OR ".join(c.to_text() for c in self.clauses) + " THEN fire"

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "rule": self.to_text(),
            "clauses": [[lit.to_dict() for lit in c.literals] for c in self.clauses],
            "mcc": dict(sorted(self.mcc.items())),
            "confusion": {k: v.as_dict() for k, v in sorted(self.confusion.items())},
            "gate_eligible": self.gate_eligible,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RuleSet":
        clauses = tuple(RuleClause(tuple(Literal.from_dict(l) for l in c)) for c in d["clauses"])
        return cls(
            clauses=clauses,
            role=d.get("role", "splitter"),
            confusion={k: ConfusionCounts(**v) for k, v in d.get("confusion", {}).items()},
            mcc={k: float(v) for k, v in d.get("mcc", {}).items()},
            gate_eligible=d.get("gate_eligible"),
        )

    @classmethod
    def from_json(cls, text: str) -> "RuleSet":
        return cls.from_dict(json.loads(text))


_LIT_RE = re.compile(rf"^(?:(NOT)\s+({_NAME_RE})|({_NAME_RE})\s*(>=|<=|=)\s*(\S+)|({_NAME_RE}))$")


def _parse_literal(text: str) -> Literal:
    m = _LIT_RE.match(text.strip())
    if m is None:
        raise RuleSyntaxError(f"cannot parse literal {text!r}")
    if m.group(1):
        return Literal(m.group(2), "=", False)
    if m.group(6):
        return Literal(m.group(6), "=", True)
    name, op, raw = m.group(3), m.group(4), m.group(5)
    if raw.lower() in ("true", "false"):
        if op != "=":
            raise RuleSyntaxError(f"boolean literal must use '=': {text!r}")
        return Literal(name, "=", raw.lower() == "true")
    try:
        return Literal(name, op, float(raw))
    except ValueError:
        raise RuleSyntaxError(f"bad threshold in {text!r}") from None


def parse_rule(text: str, role: str = "splitter") -> RuleSet:
    """Parse ``IF (a >= 1.5 AND flag) OR (NOT b) THEN fire``."""
    m = re.fullmatch(r"\s*IF\s+(.*?)\s+THEN\s+fire\s*", text, flags=re.S)
    if m is None:
        raise RuleSyntaxError("rule must read 'IF ... THEN fire'")
    body = m.group(1).strip()
    if body == "false":
        return RuleSet((), role=role)
    clauses = []
    for part in re.split(r"\)\s+OR\s+\(", body):
        part = part.strip()
        if part.startswith("("):
            part = part[1:]
        if part.endswith(")"):
            part = part[:-1]
        lits = tuple(_parse_literal(p) for p in re.split(r"\s+AND\s+", part))
        clauses.append(RuleClause(lits))
    return RuleSet(tuple(clauses), role=role)


# -- clause enumeration ------------------------------------------------------

def _threshold_candidates(col: np.ndarray, cap: int) -> np.ndarray:
    vals = np.unique(col)
    if len(vals) < 2:
        return np.zeros(0)
    mids = (vals[:-1] + vals[1:]) / 2
    if len(mids) > cap:
        idx = np.unique(np.round(np.linspace(0, len(mids) - 1, cap)).astype(int))
        mids = mids[idx]
    return mids


def _mcc_rows(fired: np.ndarray, y: np.ndarray) -> np.ndarray:
    """MCC of every row of a boolean prediction matrix against ``y``."""
    f = fired.astype(np.int64)
    yi = y.astype(np.int64)
    n = len(y)
    pos = int(yi.sum())
    tp = f @ yi
    pred = f.sum(axis=1)
    fp = pred - tp
    fn = pos - tp
    tn = n - tp - fp - fn
    num = tp * tn - fp * fn
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    out = np.zeros(len(f), dtype=float)
    nz = den > 0
    out[nz] = num[nz] / np.sqrt(den[nz].astype(float))
    return out


@dataclass
class ClausePool:
    clauses: list[RuleClause]
    fired: np.ndarray
    train_mcc: np.ndarray

    def __len__(self) -> int:
        return len(self.clauses)


def enumerate_clauses(
    matrix: PredicateMatrix,
    labels,
    max_depth: int = 2,
    beam_width: int = 8,
    max_thresholds: int = 32,
) -> ClausePool:
    """High-recall clause pool scored by train-split MCC.

    Single-literal clauses come from boolean truth values and threshold
    midpoints of real columns; deeper clauses conjoin the ``beam_width`` best
    clauses of the previous depth with single literals on other columns.
    Clauses firing on exactly the same rows are kept once (the earliest).
    """
    y = np.asarray(labels, dtype=bool)
    train = matrix.mask("train")
    if matrix.values.shape[1] < 1:
        raise ExtractionError("predicate matrix has no columns")
    yt = y[train]
    if yt.all() or not yt.any():
        raise ExtractionError("labels need both classes on the train split")

    base: list[RuleClause] = []
    base_fired: list[np.ndarray] = []
    for i, name in enumerate(matrix.names):
        col = matrix.values[:, i]
        if matrix.kinds[i] == "bool":
            for v in (True, False):
                base.append(RuleClause((Literal(name, "=", v),)))
                base_fired.append((col != 0) == v)
        else:
            for t in _threshold_candidates(col[train], max_thresholds):
                for op in (">=", "<="):
                    base.append(RuleClause((Literal(name, op, float(t)),)))
                    base_fired.append(col >= t if op == ">=" else col <= t)
    if not base:
        raise ExtractionError("no column yields a usable threshold")

    clauses: list[RuleClause] = []
    rows: list[np.ndarray] = []
    seen: set[bytes] = set()

    def add(batch: list[RuleClause], fired: np.ndarray) -> list[int]:
        kept = []
        for c, f in zip(batch, fired):
            sig = np.packbits(f).tobytes()
            if sig in seen or not f.any():
                continue
            seen.add(sig)
            clauses.append(c)
            rows.append(f)
            kept.append(len(clauses) - 1)
        return kept

    base_arr = np.array(base_fired)
    layer = add(base, base_arr)
    scores = _mcc_rows(np.array(rows)[:, train], yt) if rows else np.zeros(0)
    for _ in range(2, max_depth + 1):
        if not layer:
            break
        layer_scores = scores[layer]
        order = sorted(range(len(layer)), key=lambda k: (-layer_scores[k], clauses[layer[k]].depth, layer[k]))
        beam = [layer[k] for k in order[:beam_width]]
        batch, fired = [], []
        for bi in beam:
            used = set(clauses[bi].columns)
            for c, f in zip(base, base_arr):
                if c.literals[0].column in used:
                    continue
                batch.append(RuleClause(clauses[bi].literals + c.literals))
                fired.append(rows[bi] & f)
        if not batch:
            break
        layer = add(batch, np.array(fired))
        scores = _mcc_rows(np.array(rows)[:, train], yt)
    fired_all = np.array(rows)
    return ClausePool(clauses, fired_all, _mcc_rows(fired_all[:, train], yt))


@dataclass
class Composition:
    indices: list[int]
    trace: list[float]


def greedy_or_compose_indices(
    pool: ClausePool,
    labels,
    val_mask: np.ndarray,
    seed_k: int = 10,
    start_from: int = 0,
) -> Composition:
    """Greedy OR-composition over pool indices, maximizing validation MCC.

    The seed set is the ``seed_k`` best clauses by train MCC. Composition
    starts from the ``start_from``-th best of them by validation MCC and adds
    seed clauses only while validation MCC strictly increases.
    """
    if len(pool) == 0:
        raise ExtractionError("empty clause pool")
    y = np.asarray(labels, dtype=bool)[val_mask]
    depth = np.array([c.depth for c in pool.clauses])
    order = sorted(range(len(pool)), key=lambda i: (-pool.train_mcc[i], depth[i], i))
    seeds = np.array(order[:seed_k])
    fired = pool.fired[seeds][:, val_mask]
    seed_val = _mcc_rows(fired, y)
    ranked = sorted(range(len(seeds)), key=lambda k: (-seed_val[k], depth[seeds[k]], seeds[k]))
    first = ranked[min(start_from, len(ranked) - 1)]
    chosen = [first]
    current = fired[first].copy()
    best = seed_val[first]
    trace = [best]
    while True:
        cand = _mcc_rows(fired | current, y)
        cand[chosen] = -np.inf
        top = cand.max()
        if not top > best + 1e-12:
            break
        ties = np.flatnonzero(cand >= top - 1e-12)
        pick = int(min(ties, key=lambda k: (depth[seeds[k]], seeds[k])))
        chosen.append(pick)
        current |= fired[pick]
        best = cand[pick]
        trace.append(best)
    chosen = [int(seeds[k]) for k in chosen]
    return Composition(chosen, trace)


def greedy_or_compose(
    pool: ClausePool,
    labels,
    matrix: PredicateMatrix,
    seed_k: int = 10,
    role: str = "splitter",
    start_from: int = 0,
) -> RuleSet:
    val = matrix.mask("validation")
    if not val.any():
        val = matrix.mask("train")
    comp = greedy_or_compose_indices(pool, labels, val, seed_k, start_from)
    rule = RuleSet(tuple(pool.clauses[i] for i in comp.indices), role=role)
    return rule.scored(matrix, labels, ("train", "validation"))


class RuleSetClassifier(ClassifierMixin, BaseEstimator):
    """Fits an OR-of-conjunctions rule; ``predict`` returns whether it fires.

    ``fit`` reads labels on train and validation rows only.
    """

    def __init__(self, max_depth=2, beam_width=8, seed_k=10, max_thresholds=32, role="splitter"):
        self.max_depth = max_depth
        self.beam_width = beam_width
        self.seed_k = seed_k
        self.max_thresholds = max_thresholds
        self.role = role

    @staticmethod
    def _as_matrix(X) -> PredicateMatrix:
        return X if isinstance(X, PredicateMatrix) else PredicateMatrix.from_array(X)

    def fit(self, X, y):
        matrix = self._as_matrix(X)
        y = _guard_test_labels(matrix, y)
        self.classes_ = np.array([0, 1])
        self.pool_ = enumerate_clauses(matrix, y, self.max_depth, self.beam_width, self.max_thresholds)
        self.rule_ = greedy_or_compose(self.pool_, y, matrix, self.seed_k, self.role)
        return self

    def predict(self, X):
        check_is_fitted(self, "rule_")
        return self.rule_.fires(self._as_matrix(X)).astype(int)


def _guard_test_labels(matrix: PredicateMatrix, labels) -> np.ndarray:
    """Copy of ``labels`` with test rows blanked so fitting cannot read them."""
    y = np.asarray(labels, dtype=bool).copy()
    if matrix.split is not None:
        y[matrix.mask("test")] = False
    return y


def extract_splitters(
    matrix: PredicateMatrix,
    labels,
    k: int = 1,
    max_depth: int = 2,
    beam_width: int = 8,
    seed_k: int = 10,
    role: str = "splitter",
) -> list[RuleSet]:
    """Top-k splitters with distinct fired sets, by validation MCC; ties go to fewer clauses.

    Rules firing on every row or on none are dropped since they cannot split.
    """
    y = _guard_test_labels(matrix, labels)
    pool = enumerate_clauses(matrix, y, max_depth, beam_width)
    seen, rules = set(), []
    for start in range(max(seed_k, k)):
        r = greedy_or_compose(pool, y, matrix, seed_k, role, start_from=start)
        fired = r.fires(matrix)
        key = np.packbits(fired).tobytes()
        if key not in seen and 0 < fired.sum() < len(fired):
            seen.add(key)
            rules.append(r)
    if not rules:
        raise ExtractionError("every composed rule is constant on the examples")
    rules.sort(key=lambda r: (-r.mcc.get("validation", r.mcc.get("train", 0.0)), len(r.clauses), r.n_literals))
    return rules[:k]


# -- slices, targets, anchors, gates -----------------------------------------

def induce_split(
    rule: RuleSet,
    matrix: PredicateMatrix,
    baseline_labels,
    regime: BaselineRegime,
) -> tuple[list[int], list[int]]:
    """(D+, D-) ids within the regime's baseline-filtered examples."""
    b = int(regime)
    base = np.asarray(baseline_labels).astype(int)
    in_regime = base == b
    if not in_regime.any():
        raise RegimeEmptyError(f"no examples with baseline label {b}")
    fired = rule.fires(matrix)
    plus = matrix.ids[in_regime & fired]
    minus = matrix.ids[in_regime & ~fired]
    return [int(e) for e in plus], [int(e) for e in minus]


def flip_targets(
    neuron: NeuronCoord,
    oracle,
    examples: Mapping[SliceTag, Sequence[int]],
    regime: BaselineRegime,
) -> tuple[np.ndarray, np.ndarray]:
    """(ids, targets) with target 1 iff ablating ``neuron`` alone flips the outcome."""
    b = int(regime)
    batch = {s: list(examples.get(s, ())) for s in SLICES if examples.get(s)}
    out = oracle.query_slices([neuron], BaselineRegime(regime), batch)
    ids = np.concatenate([np.asarray(batch[s], dtype=np.int64) for s in batch]) if batch else np.zeros(0, np.int64)
    y = np.concatenate([(out[s] != b).astype(int) for s in batch]) if batch else np.zeros(0, int)
    return ids, y


@dataclass
class AnchorResult:
    neuron: NeuronCoord
    regime: BaselineRegime
    rule: RuleSet | None
    test_mcc: float | None
    high_quality: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "neuron": str(self.neuron), "regime": int(self.regime),
            "rule": None if self.rule is None else self.rule.to_dict(),
            "test_mcc": self.test_mcc, "high_quality": self.high_quality, "reason": self.reason,
        }


def anchor_rule(
    neuron: NeuronCoord,
    targets,
    matrix: PredicateMatrix,
    regime: BaselineRegime = BaselineRegime.POSITIVE,
    threshold: float = 0.85,
    max_depth: int = 2,
    beam_width: int = 8,
    seed_k: int = 10,
) -> AnchorResult:
    """Fit a rule predicting the neuron's flip targets; score it once on test rows.

    ``matrix`` rows must align with ``targets`` and carry split tags.
    """
    regime = BaselineRegime(regime)
    role = "anchored-1->0" if regime is BaselineRegime.POSITIVE else "anchored-0->1"
    y = np.asarray(targets, dtype=bool)
    if matrix.split is None:
        raise ValueError("anchoring needs train/validation/test split tags")
    train_y = y[matrix.mask("train")]
    if train_y.all() or not train_y.any():
        return AnchorResult(neuron, regime, None, None, False, "degenerate targets")
    guarded = _guard_test_labels(matrix, y)
    pool = enumerate_clauses(matrix, guarded, max_depth, beam_width)
    rule = greedy_or_compose(pool, guarded, matrix, seed_k, role)
    test = matrix.mask("test")
    if not test.any():
        return AnchorResult(neuron, regime, rule, None, False, "empty test split")
    rule = rule.scored(matrix, y, ("test",))
    score = rule.mcc["test"]
    return AnchorResult(neuron, regime, rule, score, score >= threshold)


def _check_gate_eligible(rule: RuleSet, matrix: PredicateMatrix) -> None:
    for name in rule.columns:
        if not matrix.observable[matrix.column_index(name)]:
            raise GateIneligibleError(f"column {name!r} is derived from the baseline output")


def gate_policy(rule: RuleSet, neuron: NeuronCoord, matrix: PredicateMatrix, example_id: int) -> frozenset:
    """Ablation set for one example: {neuron} when the rule fires, else empty."""
    _check_gate_eligible(rule, matrix)
    row = matrix.subset([example_id])
    return frozenset({neuron}) if bool(rule.fires(row)[0]) else frozenset()


def gated_outcomes(
    rule: RuleSet,
    neuron: NeuronCoord,
    matrix: PredicateMatrix,
    oracle,
    examples: Mapping[SliceTag, Sequence[int]],
    regime: BaselineRegime,
) -> dict[int, int]:
    """Post-policy outcome for every example, batching examples by decision."""
    _check_gate_eligible(rule, matrix)
    out: dict[int, int] = {}
    for s in SLICES:
        ids = list(examples.get(s, ()))
        if not ids:
            continue
        fires = rule.fires(matrix.subset(ids))
        for on in (False, True):
            members = [e for e, f in zip(ids, fires) if bool(f) == on]
            if members:
                res = oracle.query([neuron] if on else [], s, regime, members)
                out.update({e: int(v) for e, v in zip(members, res)})
    return out


def fake_rule_control(labels, seed: int) -> np.ndarray:
    """Seeded uniform permutation of the labels (class counts preserved)."""
    y = np.asarray(labels)
    return y[np.random.default_rng(seed).permutation(len(y))]


def assign_splits(
    points: np.ndarray,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    n_clusters: int = 10,
    seed: int = 0,
) -> np.ndarray:
    """Train/validation/test tags stratified by k-center clusters of ``points``."""
    from .coverage import greedy_k_center

    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    pts = np.asarray(points, dtype=float)
    k = max(1, min(n_clusters, len(pts)))
    _, assign, _ = greedy_k_center(pts, k)
    rng = np.random.default_rng(seed)
    cuts = np.cumsum(fractions)
    tags = np.empty(len(pts), dtype=object)
    for c in np.unique(assign):
        members = rng.permutation(np.flatnonzero(assign == c))
        m = len(members)
        for i, row in enumerate(members):
            u = (i + 0.5) / m
            tags[row] = SPLITS[int(np.searchsorted(cuts, u, side="right"))] if u < cuts[-1] else SPLITS[-1]
    return tags
