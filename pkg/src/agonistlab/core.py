"""Domain types and pure metric computations shared by every stage."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import total_ordering
from typing import Iterable, Mapping, Sequence


class EmptyInputError(ValueError):
    pass


class UndefinedDominanceError(ValueError):
    pass


_COORD_RE = re.compile(r"^m(\d+):(\d+)$")


@total_ordering
@dataclass(frozen=True)
class NeuronCoord:
    """One ablatable scalar coordinate, ordered by (layer, channel)."""

    layer: int
    channel: int

    def __post_init__(self) -> None:
        if self.layer < 0 or self.channel < 0:
            raise ValueError(f"negative coordinate: ({self.layer}, {self.channel})")

    def __lt__(self, other: "NeuronCoord") -> bool:
        if not isinstance(other, NeuronCoord):
            return NotImplemented
        return (self.layer, self.channel) < (other.layer, other.channel)

    def __str__(self) -> str:
        return f"m{self.layer}:{self.channel}"

    @classmethod
    def parse(cls, text: str) -> "NeuronCoord":
        m = _COORD_RE.match(text.strip())
        if m is None:
            raise ValueError(f"not a coordinate: {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))


class BaselineRegime(enum.IntEnum):
    """Baseline label b. ``POSITIVE`` measures 1->0 flips, ``NEGATIVE`` 0->1."""

    NEGATIVE = 0
    POSITIVE = 1

    @property
    def b(self) -> int:
        return int(self)

    @property
    def direction(self) -> str:
        return "1->0" if self is BaselineRegime.POSITIVE else "0->1"


class SliceTag(str, enum.Enum):
    ASSOCIATED = "+"
    UNRELATED = "-"

    @property
    def other(self) -> "SliceTag":
        return SliceTag.UNRELATED if self is SliceTag.ASSOCIATED else SliceTag.ASSOCIATED


SLICES = (SliceTag.ASSOCIATED, SliceTag.UNRELATED)


def _check_rate(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name}={value} outside [0, 1]")


@dataclass(frozen=True)
class GroupEffect:
    """Slice flip rates of one ablated group, with counts and upper bounds.

    Flip counts are recoverable as ``round(delta * n)``, so bounds can always
    be recomputed at a different confidence level.
    """

    delta_plus: float
    delta_minus: float
    n_plus: int
    n_minus: int
    ucb_plus: float = 1.0
    ucb_minus: float = 1.0

    def __post_init__(self) -> None:
        for name in ("delta_plus", "delta_minus", "ucb_plus", "ucb_minus"):
            _check_rate(name, getattr(self, name))
        if self.ucb_plus < self.delta_plus or self.ucb_minus < self.delta_minus:
            raise ValueError("upper confidence bound below point estimate")
        if self.n_plus < 0 or self.n_minus < 0:
            raise ValueError("negative sample count")

    @property
    def x_plus(self) -> int:
        return round(self.delta_plus * self.n_plus)

    @property
    def x_minus(self) -> int:
        return round(self.delta_minus * self.n_minus)

    @property
    def strength(self) -> float:
        return max(self.delta_plus, self.delta_minus)

    @property
    def selectivity(self) -> float:
        return abs(self.delta_plus - self.delta_minus)

    @property
    def signed_selectivity(self) -> float:
        return self.delta_plus - self.delta_minus

    @property
    def ucb(self) -> float:
        return max(self.ucb_plus, self.ucb_minus)

    def accuracies(self, regime: BaselineRegime) -> tuple[float, float]:
        """Post-intervention accuracies (a+, a-) implied by the flip rates."""
        if regime is BaselineRegime.POSITIVE:
            return 1.0 - self.delta_plus, 1.0 - self.delta_minus
        return self.delta_plus, self.delta_minus

    def swapped(self) -> "GroupEffect":
        return GroupEffect(
            self.delta_minus, self.delta_plus, self.n_minus, self.n_plus,
            self.ucb_minus, self.ucb_plus,
        )

    @classmethod
    def from_accuracies(
        cls, a_plus: float, a_minus: float, regime: BaselineRegime,
        n_plus: int = 0, n_minus: int = 0,
    ) -> "GroupEffect":
        if regime is BaselineRegime.POSITIVE:
            return cls(1.0 - a_plus, 1.0 - a_minus, n_plus, n_minus)
        return cls(a_plus, a_minus, n_plus, n_minus)


@dataclass(frozen=True)
class AgonistRecord:
    neuron: NeuronCoord
    regime: BaselineRegime
    effect: GroupEffect
    catastrophic: bool = False
    selective: bool = False

    @classmethod
    def classify(
        cls,
        neuron: NeuronCoord,
        regime: BaselineRegime,
        effect: GroupEffect,
        tau: float,
        epsilon: float,
        catastrophic_tol: float = 0.05,
    ) -> "AgonistRecord":
        """Build a record with selectivity and catastrophic flags set from thresholds.

        Catastrophic means strong, non-selective, and flipping nearly every
        example on both slices.
        """
        selective = effect.selectivity >= epsilon
        catastrophic = (
            effect.strength >= tau
            and not selective
            and min(effect.delta_plus, effect.delta_minus) >= 1.0 - catastrophic_tol
        )
        return cls(neuron, regime, effect, catastrophic, selective)

    @property
    def strength(self) -> float:
        return self.effect.strength

    @property
    def selectivity(self) -> float:
        return self.effect.selectivity


def flip_rate(outcomes: Sequence[int], regime: BaselineRegime | int) -> float:
    """Fraction of post-intervention outcomes that differ from the baseline label."""
    b = int(regime)
    n = len(outcomes)
    if n == 0:
        raise EmptyInputError("flip_rate needs at least one outcome")
    return sum(1 for o in outcomes if int(o) != b) / n


def strength_and_selectivity(effect: GroupEffect) -> tuple[float, float, float]:
    return effect.strength, effect.selectivity, effect.signed_selectivity


def dominance_ratio(
    group_effect: float,
    member_effects: Mapping[frozenset | tuple, float],
    m: int = 1,
) -> float:
    """m-way dominance ratio: best subset strength over the group strength.

    ``member_effects`` maps subsets of the group (any iterable of members) to
    their strength; subsets larger than ``m`` are rejected. A group is
    (m, rho)-overtopped iff the returned ratio is >= rho.
    """
    if m < 1:
        raise ValueError("m must be positive")
    if group_effect <= 0:
        raise UndefinedDominanceError("dominance is undefined for a zero-strength group")
    best = 0.0
    for subset, strength in member_effects.items():
        size = len(subset)
        if not 1 <= size <= m:
            raise ValueError(f"subset of size {size} outside [1, {m}]")
        best = max(best, strength)
    return best / group_effect


def jaccard(set_a: Iterable, set_b: Iterable) -> float:
    """|A & B| / |A | B|; two empty sets give 0."""
    a, b = set(set_a), set(set_b)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def accuracy_gap(effect: GroupEffect, regime: BaselineRegime) -> float:
    """a- minus a+, the accuracy-gap convention used in diagnostic tables."""
    a_plus, a_minus = effect.accuracies(regime)
    return a_minus - a_plus
