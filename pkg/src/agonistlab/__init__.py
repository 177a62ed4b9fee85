"""Rule-grounded neuron localization on synthetic planted-truth oracles."""
from .core import (AgonistRecord, BaselineRegime, EmptyInputError, GroupEffect, NeuronCoord, SliceTag,
                   UndefinedDominanceError, accuracy_gap, dominance_ratio, flip_rate, jaccard,
                   strength_and_selectivity)
from .localizer import HierarchicalAblation, SearchConfig, cha_search, localize_layers
from .oracle import PlantSpec, SyntheticOracle, SyntheticTask, plant_task

__version__ = "0.1.0"

__all__ = [
    "AgonistRecord", "BaselineRegime", "EmptyInputError", "GroupEffect", "NeuronCoord", "SliceTag",
    "UndefinedDominanceError", "accuracy_gap", "dominance_ratio", "flip_rate", "jaccard",
    "strength_and_selectivity", "HierarchicalAblation", "SearchConfig", "cha_search", "localize_layers",
    "PlantSpec", "SyntheticOracle", "SyntheticTask", "plant_task",
]
