import numpy as np
import pytest

from agonistlab.core import SLICES, BaselineRegime, NeuronCoord, SliceTag
from agonistlab.oracle import SyntheticTask


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def full_subset(task, regime=BaselineRegime.POSITIVE):
    return {s: list(task.slice_ids(regime, s)) for s in SLICES}


def small_task(flips_plus, flips_minus=None, n=64, width=8, regime=BaselineRegime.POSITIVE, **kw):
    """Task with one regime; flip sets given as {channel: iterable of positions}."""
    flips_minus = flips_minus or {}
    examples = {(regime, SliceTag.ASSOCIATED): tuple(range(n)),
                (regime, SliceTag.UNRELATED): tuple(range(n, 2 * n))}
    table = {
        (regime, SliceTag.ASSOCIATED): {NeuronCoord(0, c): list(ids) for c, ids in flips_plus.items()},
        (regime, SliceTag.UNRELATED): {NeuronCoord(0, c): [n + i for i in ids] for c, ids in flips_minus.items()},
    }
    return SyntheticTask.from_flip_sets((width,), examples, table, **kw)
