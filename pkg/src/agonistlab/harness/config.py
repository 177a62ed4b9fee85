"""Run configuration: nested dataclasses with JSON I/O and dotted overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

SCHEMA_VERSION = 1
HQ_THRESHOLDS = (0.80, 0.85, 0.90, 0.95, 0.99)


class ConfigError(ValueError):
    pass


@dataclass
class WorldConfig:
    n_examples: int = 800
    n_bool: int = 8
    bool_rate: float = 0.35
    private_rate_range: list = field(default_factory=lambda: [0.3, 0.8])
    n_real: int = 4
    d_embed: int = 32
    n_latent_clusters: int = 6
    rare_cluster_size: int = 0
    embed_noise: float = 0.3
    layer_widths: list = field(default_factory=lambda: [256, 256])
    assoc_literals: list = field(default_factory=lambda: ["b0", "b1"])
    p_base_assoc: float = 0.9
    p_base_other: float = 0.3
    n_agonists: int = 6
    n_repair: int = 2
    flip_noise: float = 0.03
    n_background: int = 20
    background_rate: float = 0.03
    n_catastrophic: int = 1
    plantable: bool = False
    oracle_noise: float = 0.0


@dataclass
class PlantConfig:
    layer_widths: list = field(default_factory=lambda: [4096])
    n_per_slice: int = 64
    agonist_strengths: list = field(default_factory=lambda: [0.5] * 8)
    minus_fraction: float = 0.0
    overlap: int = 0
    n_antagonists: int = 0
    background_cap: float = 0.05
    regimes: list = field(default_factory=lambda: [1])
    noise: float = 0.0


@dataclass
class TaskConfig:
    kind: str = "world"
    manifest: str | None = None
    world: WorldConfig = field(default_factory=WorldConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)


@dataclass
class SearchSection:
    tau: float = 0.2
    epsilon: float = 0.2
    alpha: float = 0.05
    budget_mode: str = "fixed-per-node"
    samples_per_slice: int = 64
    resample_policy: str = "fixed-subset"
    leaf_rule: str = "point"
    n_jobs: int = 1


@dataclass
class RulesSection:
    max_depth: int = 2
    beam_width: int = 8
    seed_k: int = 10
    n_splitters: int = 3
    hq_threshold: float = 0.85
    thresholds: list = field(default_factory=lambda: list(HQ_THRESHOLDS))
    split_fractions: list = field(default_factory=lambda: [0.6, 0.2, 0.2])
    split_clusters: int = 10


@dataclass
class CoverageSection:
    d_pca: int = 64
    n_clusters: int = 100
    n_sel: int = 50
    radius: float = 0.5
    length_tolerance: float = 0.2


@dataclass
class ReduceSection:
    kind: str = "none"
    M: int = 512
    leak_rate: float = 0.0
    ig_steps: int = 20


@dataclass
class StagesSection:
    reduce: bool = True
    coverage: bool = True


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    regimes: list = field(default_factory=lambda: [1, 0])
    n_seeds: int = 1
    task: TaskConfig = field(default_factory=TaskConfig)
    search: SearchSection = field(default_factory=SearchSection)
    rules: RulesSection = field(default_factory=RulesSection)
    coverage: CoverageSection = field(default_factory=CoverageSection)
    reduce: ReduceSection = field(default_factory=ReduceSection)
    stages: StagesSection = field(default_factory=StagesSection)
    formats: list = field(default_factory=lambda: ["json", "csv"])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        cfg = _build(cls, data, "")
        _validate(cfg)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, assignments) -> "RunConfig":
        data = self.to_dict()
        for item in assignments:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = data
            parts = key.strip().split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ConfigError(f"unknown config section {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config field {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(data)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)} in {path or 'config'}")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            continue
        sub = _SECTIONS.get((cls.__name__, name))
        kwargs[name] = _build(sub, data[name], f"{path}{name}.") if sub else data[name]
    return cls(**kwargs)


_SECTIONS = {
    ("RunConfig", "task"): TaskConfig,
    ("RunConfig", "search"): SearchSection,
    ("RunConfig", "rules"): RulesSection,
    ("RunConfig", "coverage"): CoverageSection,
    ("RunConfig", "reduce"): ReduceSection,
    ("RunConfig", "stages"): StagesSection,
    ("TaskConfig", "world"): WorldConfig,
    ("TaskConfig", "plant"): PlantConfig,
}


def _validate(cfg: RunConfig) -> None:
    if cfg.task.kind not in ("world", "plant"):
        raise ConfigError(f"task.kind must be 'world' or 'plant', got {cfg.task.kind!r}")
    if cfg.reduce.kind not in ("none", "ground-truth", "ig"):
        raise ConfigError(f"reduce.kind must be none, ground-truth or ig, got {cfg.reduce.kind!r}")
    if not set(cfg.regimes) <= {0, 1} or not cfg.regimes:
        raise ConfigError("regimes must be a nonempty subset of {0, 1}")
    if cfg.n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")
    if abs(sum(cfg.rules.split_fractions) - 1.0) > 1e-9:
        raise ConfigError("rules.split_fractions must sum to 1")


def derive_seed(master: int, label: str) -> int:
    """Sub-seed for a named stage; stable across runs and platforms."""
    h = hashlib.sha256(f"{int(master)}/{label}".encode()).digest()
    return int.from_bytes(h[:4], "little")
