"""Experiment harness: configuration, synthetic worlds, pipelines and CLI."""
from .config import RunConfig, derive_seed
from .experiments import EXPERIMENTS, ArtifactStore, Pipeline, StageError, run_e0, run_e1, run_e2, run_e3
from .world import World, make_world

__all__ = ["RunConfig", "derive_seed", "EXPERIMENTS", "ArtifactStore", "Pipeline", "StageError",
           "run_e0", "run_e1", "run_e2", "run_e3", "World", "make_world"]
