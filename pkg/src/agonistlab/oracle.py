"""Behavior oracles and the planted union-of-flips synthetic task."""
from __future__ import annotations

import hashlib
import json
import threading
from collections import defaultdict
from dataclasses import dataclass, field, asdict
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .core import SLICES, BaselineRegime, NeuronCoord, SliceTag

MANIFEST_VERSION = 1
BASELINE_MODES = ("zero", "mean", "mean-positional")

Key = tuple[BaselineRegime, SliceTag]


class InfeasiblePlantError(ValueError):
    pass


class UnknownIdError(LookupError):
    pass


class BehaviorOracle(Protocol):
    """Black box answering post-ablation outcomes for example ids.

    ``query`` evaluates one slice, ``query_slices`` evaluates several slices
    under the same ablation; each call counts as one group evaluation.
    """

    def query(self, group: Iterable[NeuronCoord], slice: SliceTag, regime: BaselineRegime,
              examples: Sequence[int]) -> np.ndarray: ...

    def query_slices(self, group: Iterable[NeuronCoord], regime: BaselineRegime,
                     examples: Mapping[SliceTag, Sequence[int]]) -> dict[SliceTag, np.ndarray]: ...

    def candidate_universe(self) -> dict[int, tuple[NeuronCoord, ...]]: ...

    @property
    def query_count(self) -> int: ...


# bitsets are python ints; bit i is position i in the (regime, slice) example list

def bits_from_positions(positions: Iterable[int]) -> int:
    out = 0
    for p in positions:
        out |= 1 << int(p)
    return out


def bits_to_array(bits: int, length: int) -> np.ndarray:
    raw = bits.to_bytes((length + 7) // 8 or 1, "little")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:length].astype(bool)


def rle_encode(bits: int, length: int) -> list[int]:
    """Alternating run lengths over ``length`` positions, starting with a zero-run."""
    arr = bits_to_array(bits, length)
    runs: list[int] = []
    current, count = False, 0
    for v in arr:
        if bool(v) == current:
            count += 1
        else:
            runs.append(count)
            current, count = bool(v), 1
    runs.append(count)
    return runs


def rle_decode(runs: Sequence[int]) -> int:
    bits, pos, on = 0, 0, False
    for r in runs:
        if on and r:
            bits |= ((1 << r) - 1) << pos
        pos += r
        on = not on
    return bits


def _key_str(key: Key) -> str:
    return f"{int(key[0])}:{key[1].value}"


def _parse_key(text: str) -> Key:
    b, s = text.split(":")
    return BaselineRegime(int(b)), SliceTag(s)


def _group_digest(group: Sequence[NeuronCoord]) -> int:
    h = hashlib.blake2b(digest_size=8)
    for c in sorted(group):
        h.update(c.layer.to_bytes(4, "little") + c.channel.to_bytes(4, "little"))
    return int.from_bytes(h.digest(), "little")


@dataclass
class SyntheticTask:
    """Exact union-of-flips ground truth.

    ``examples[(b, S)]`` lists the example ids of slice S within regime b,
    and ``flips[(b, S)][j]`` is the bitset (over positions in that list) of
    examples flipped by ablating j alone. Neurons absent from ``flips`` flip
    nothing.
    """

    layer_widths: tuple[int, ...]
    examples: dict[Key, tuple[int, ...]]
    flips: dict[Key, dict[NeuronCoord, int]]
    noise: dict[SliceTag, float] = field(default_factory=dict)
    baseline_mode: str = "zero"
    seed: int = 0
    spec: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if self.baseline_mode not in BASELINE_MODES:
            raise ValueError(f"unknown baseline mode {self.baseline_mode!r}")
        self._pos: dict[Key, dict[int, int]] = {
            k: {e: i for i, e in enumerate(ids)} for k, ids in self.examples.items()
        }
        for key, table in self.flips.items():
            if key not in self.examples:
                raise ValueError(f"flip sets for unknown slice {key}")
            limit = 1 << len(self.examples[key])
            for j, bits in table.items():
                self._check_coord(j)
                if bits >= limit or bits < 0:
                    raise ValueError(f"flip set of {j} references invalid example positions")

    # -- lookups -------------------------------------------------------------

    def _check_coord(self, j: NeuronCoord) -> None:
        if not (0 <= j.layer < len(self.layer_widths) and j.channel < self.layer_widths[j.layer]):
            raise UnknownIdError(f"unknown neuron {j}")

    def candidate_universe(self) -> dict[int, tuple[NeuronCoord, ...]]:
        return {
            layer: tuple(NeuronCoord(layer, c) for c in range(width))
            for layer, width in enumerate(self.layer_widths)
        }

    def slice_ids(self, regime: BaselineRegime, slice: SliceTag) -> tuple[int, ...]:
        return self.examples.get((BaselineRegime(regime), SliceTag(slice)), ())

    def positions(self, regime, slice, examples: Sequence[int]) -> np.ndarray:
        table = self._pos.get((BaselineRegime(regime), SliceTag(slice)), {})
        try:
            return np.fromiter((table[e] for e in examples), dtype=np.int64, count=len(examples))
        except KeyError as exc:
            raise UnknownIdError(f"example {exc.args[0]} not in slice {slice.value} of regime {int(regime)}") from None

    def union_bits(self, group: Iterable[NeuronCoord], regime, slice) -> int:
        table = self.flips.get((BaselineRegime(regime), SliceTag(slice)), {})
        bits = 0
        for j in group:
            self._check_coord(j)
            bits |= table.get(j, 0)
        return bits

    def flip_set(self, neuron: NeuronCoord, regime, slice) -> frozenset[int]:
        ids = self.slice_ids(regime, slice)
        arr = bits_to_array(self.union_bits([neuron], regime, slice), len(ids))
        return frozenset(ids[i] for i in np.flatnonzero(arr))

    def exact_rate(self, group: Iterable[NeuronCoord], regime, slice) -> float:
        n = len(self.slice_ids(regime, slice))
        if n == 0:
            return 0.0
        return self.union_bits(group, regime, slice).bit_count() / n

    def exact_strength(self, group: Iterable[NeuronCoord], regime) -> float:
        group = list(group)
        return max(self.exact_rate(group, regime, s) for s in SLICES)

    def planted_neurons(self, regime) -> set[NeuronCoord]:
        out: set[NeuronCoord] = set()
        for s in SLICES:
            out.update(j for j, b in self.flips.get((BaselineRegime(regime), s), {}).items() if b)
        return out

    def oracle(self, seed: int | None = None) -> "SyntheticOracle":
        return SyntheticOracle(self, seed=seed)

    # -- construction ----------------------------------------------------------

    @classmethod
    def from_flip_sets(
        cls,
        layer_widths: Sequence[int],
        examples: Mapping[Key, Sequence[int]],
        flip_sets: Mapping[Key, Mapping[NeuronCoord, Iterable[int]]],
        **kwargs,
    ) -> "SyntheticTask":
        """Build from flip sets given as example ids rather than positions."""
        examples = {k: tuple(int(e) for e in v) for k, v in examples.items()}
        flips: dict[Key, dict[NeuronCoord, int]] = {}
        for key, table in flip_sets.items():
            pos = {e: i for i, e in enumerate(examples[key])}
            flips[key] = {}
            for j, ids in table.items():
                bits = bits_from_positions(pos[e] for e in ids if e in pos)
                if bits:
                    flips[key][j] = bits
        return cls(tuple(layer_widths), examples, flips, **kwargs)

    # -- manifest ----------------------------------------------------------------

    def to_manifest(self) -> dict:
        flips = {}
        for key in sorted(self.flips, key=_key_str):
            n = len(self.examples[key])
            flips[_key_str(key)] = {
                str(j): rle_encode(bits, n) for j, bits in sorted(self.flips[key].items()) if bits
            }
        return {
            "format": "agonistlab.task",
            "version": MANIFEST_VERSION,
            "layer_widths": list(self.layer_widths),
            "seed": self.seed,
            "baseline_mode": self.baseline_mode,
            "noise": {s.value: p for s, p in sorted(self.noise.items(), key=lambda kv: kv[0].value)},
            "spec": self.spec,
            "meta": self.meta,
            "examples": {_key_str(k): list(v) for k, v in sorted(self.examples.items(), key=lambda kv: _key_str(kv[0]))},
            "flips": flips,
        }

    @classmethod
    def from_manifest(cls, data: dict) -> "SyntheticTask":
        if data.get("format") != "agonistlab.task":
            raise ValueError("not a task manifest")
        if data.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {data.get('version')}")
        return cls(
            layer_widths=tuple(data["layer_widths"]),
            examples={_parse_key(k): tuple(v) for k, v in data["examples"].items()},
            flips={
                _parse_key(k): {NeuronCoord.parse(j): rle_decode(r) for j, r in table.items()}
                for k, table in data["flips"].items()
            },
            noise={SliceTag(s): float(p) for s, p in data.get("noise", {}).items()},
            baseline_mode=data.get("baseline_mode", "zero"),
            seed=int(data.get("seed", 0)),
            spec=data.get("spec"),
            meta=data.get("meta", {}),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_manifest(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SyntheticTask":
        with open(path) as fh:
            return cls.from_manifest(json.load(fh))


class SyntheticOracle:
    """Counting oracle over a :class:`SyntheticTask`.

    Noise is drawn from a generator keyed by (seed, group, slice, regime,
    repeat index), so results do not depend on the order in which distinct
    groups are evaluated, while repeated queries of one group get fresh draws.
    """

    def __init__(self, task: SyntheticTask, seed: int | None = None):
        self.task = task
        self.seed = task.seed if seed is None else seed
        self._count = 0
        self._repeats: dict[tuple, int] = defaultdict(int)
        self._lock = threading.Lock()

    @property
    def query_count(self) -> int:
        return self._count

    def candidate_universe(self) -> dict[int, tuple[NeuronCoord, ...]]:
        return self.task.candidate_universe()

    def _outcomes(self, group: list[NeuronCoord], slice: SliceTag, regime: BaselineRegime,
                  examples: Sequence[int]) -> np.ndarray:
        b = int(regime)
        pos = self.task.positions(regime, slice, examples)
        n = len(self.task.slice_ids(regime, slice))
        flipped = bits_to_array(self.task.union_bits(group, regime, slice), n)[pos] if n else np.zeros(0, bool)
        p = self.task.noise.get(slice, 0.0)
        if p > 0 and len(pos):
            key = (_group_digest(group), SLICES.index(slice), b)
            with self._lock:
                rep = self._repeats[key]
                self._repeats[key] = rep + 1
            rng = np.random.default_rng([self.seed & 0xFFFFFFFF, key[0] & 0xFFFFFFFF, key[0] >> 32, key[1], b, rep])
            flipped = flipped ^ (rng.random(n) < p)[pos]
        return np.where(flipped, 1 - b, b).astype(np.int8)

    def _tick(self) -> None:
        with self._lock:
            self._count += 1

    def query(self, group, slice, regime, examples) -> np.ndarray:
        group = list(group)
        regime, slice = BaselineRegime(regime), SliceTag(slice)
        out = self._outcomes(group, slice, regime, examples)
        self._tick()
        return out

    def query_slices(self, group, regime, examples) -> dict[SliceTag, np.ndarray]:
        group = list(group)
        regime = BaselineRegime(regime)
        out = {SliceTag(s): self._outcomes(group, SliceTag(s), regime, ex) for s, ex in examples.items()}
        self._tick()
        return out


@dataclass(frozen=True)
class PlantSpec:
    """Recipe for a planted task.

    Agonists flip ``strength`` of the associated slice and
    ``minus_fraction * strength`` of the unrelated slice. Background neurons
    draw flips from a shared pool, so any union of them stays within
    ``background_pool`` of a slice.
    """

    layer_widths: tuple[int, ...] = (256,)
    n_per_slice: int = 64
    agonist_strengths: tuple[float, ...] = ()
    overlap: float = 0.0
    minus_fraction: float = 0.0
    n_antagonists: int = 0
    antagonist_strength: float = 1.0
    background_cap: float = 0.05
    background_pool: float | None = None
    background_density: float = 0.25
    regimes: tuple[int, ...] = (1,)
    agonist_layers: tuple[int, ...] | None = None
    tau: float = 0.2
    margin: float = 0.0
    noise: float = 0.0
    baseline_mode: str = "zero"
    seed: int = 0

    @property
    def k(self) -> int:
        return len(self.agonist_strengths)

    def to_dict(self) -> dict:
        return asdict(self)


def _seed_for(spec: PlantSpec, label: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{spec.seed}|{spec.baseline_mode}|{label}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _check_spec(spec: PlantSpec) -> None:
    n = spec.n_per_slice
    if n < 1:
        raise InfeasiblePlantError("n_per_slice must be positive")
    if not 0.0 <= spec.overlap <= 1.0:
        raise InfeasiblePlantError("overlap must lie in [0, 1]")
    for s in spec.agonist_strengths:
        if not spec.tau + spec.margin <= s <= 1.0:
            raise InfeasiblePlantError(f"agonist strength {s} outside [tau + margin, 1]")
    if spec.background_cap >= spec.tau:
        raise InfeasiblePlantError("background_cap must be strictly below tau")
    pool = spec.background_cap if spec.background_pool is None else spec.background_pool
    if not spec.background_cap <= pool <= 1.0:
        raise InfeasiblePlantError("background_pool must lie in [background_cap, 1]")
    slots = sum(spec.layer_widths)
    if spec.k + spec.n_antagonists > slots:
        raise InfeasiblePlantError("more planted neurons than candidate slots")
    if spec.agonist_layers is not None and len(spec.agonist_layers) != spec.k:
        raise InfeasiblePlantError("agonist_layers must name one layer per agonist")
    sizes = [round(s * n) for s in spec.agonist_strengths]
    shared = [round(spec.overlap * z) for z in sizes]
    core = max(shared, default=0)
    for z, c in zip(sizes, shared):
        if z - c > n - core:
            raise InfeasiblePlantError(
                f"overlap {spec.overlap} leaves too few private examples for a flip set of size {z}"
            )


def plant_task(spec: PlantSpec) -> SyntheticTask:
    """Generate a task whose singleton strengths follow ``spec`` exactly (up to 1/n rounding)."""
    _check_spec(spec)
    n = spec.n_per_slice
    regimes = [BaselineRegime(b) for b in spec.regimes]
    examples: dict[Key, tuple[int, ...]] = {}
    next_id = 0
    for b in regimes:
        for s in SLICES:
            examples[(b, s)] = tuple(range(next_id, next_id + n))
            next_id += n

    place = _seed_for(spec, "placement")
    slots = [(layer, c) for layer, w in enumerate(spec.layer_widths) for c in range(w)]
    planted_count = spec.k + spec.n_antagonists
    if spec.agonist_layers is None:
        picks = place.choice(len(slots), size=planted_count, replace=False)
        agonists = [NeuronCoord(*slots[i]) for i in picks[:spec.k]]
        antagonists = [NeuronCoord(*slots[i]) for i in picks[spec.k:]]
    else:
        agonists = []
        taken: set[tuple[int, int]] = set()
        for layer in spec.agonist_layers:
            free = [c for c in range(spec.layer_widths[layer]) if (layer, c) not in taken]
            c = int(place.choice(free))
            taken.add((layer, c))
            agonists.append(NeuronCoord(layer, c))
        rest = [i for i, sl in enumerate(slots) if sl not in taken]
        antagonists = [NeuronCoord(*slots[i]) for i in place.choice(rest, size=spec.n_antagonists, replace=False)]

    pool_frac = spec.background_cap if spec.background_pool is None else spec.background_pool
    cap = int(np.floor(spec.background_cap * n))
    if cap / n >= spec.tau:
        cap -= 1
    residuals = {}
    flips: dict[Key, dict[NeuronCoord, int]] = {}
    for b in regimes:
        for s in SLICES:
            rng = _seed_for(spec, f"flips|{int(b)}|{s.value}")
            table: dict[NeuronCoord, int] = {}
            # background first so planted neurons overwrite their slots
            pool = rng.permutation(n)[: max(cap, int(np.floor(pool_frac * n)))]
            if cap > 0 and len(pool):
                dense = rng.random(len(slots)) < spec.background_density
                for idx in np.flatnonzero(dense):
                    size = int(rng.integers(1, cap + 1))
                    table[NeuronCoord(*slots[idx])] = bits_from_positions(
                        rng.choice(pool, size=min(size, len(pool)), replace=False)
                    )
            order = rng.permutation(n)
            scale = 1.0 if s is SliceTag.ASSOCIATED else spec.minus_fraction
            sizes = [round(st * scale * n) for st in spec.agonist_strengths]
            shared = [round(spec.overlap * z) for z in sizes]
            core = order[: max(shared, default=0)]
            private = order[max(shared, default=0):]
            for j, st, z, c in zip(agonists, spec.agonist_strengths, sizes, shared):
                residuals[f"{j}|{int(b)}|{s.value}"] = z / n - st * scale
                own = rng.choice(private, size=z - c, replace=False) if z - c else []
                table[j] = bits_from_positions(list(core[:c]) + list(own))
            anta = round(spec.antagonist_strength * n)
            for j in antagonists:
                table[j] = bits_from_positions(order[:anta])
            flips[(b, s)] = {j: v for j, v in table.items() if v}
    return SyntheticTask(
        layer_widths=spec.layer_widths,
        examples=examples,
        flips=flips,
        noise={s: spec.noise for s in SLICES} if spec.noise else {},
        baseline_mode=spec.baseline_mode,
        seed=spec.seed,
        spec=spec.to_dict(),
        meta={
            "agonists": [str(j) for j in sorted(agonists)],
            "antagonists": [str(j) for j in sorted(antagonists)],
            "rounding_residuals": residuals,
        },
    )


def ground_truth_agonists(task: SyntheticTask, tau: float, regime) -> dict[NeuronCoord, float]:
    """Every neuron whose exact singleton strength is >= tau, with that strength."""
    regime = BaselineRegime(regime)
    out = {}
    for j in sorted(task.planted_neurons(regime)):
        e = task.exact_strength([j], regime)
        if e >= tau:
            out[j] = e
    return out
