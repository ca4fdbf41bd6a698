"""Experiment configuration: strict schema, YAML round-trip, content hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import ForgetSpec
from .errors import ConfigError
from .localization import Criterion
from .nn import TrainRecipe
from .unlearning import ALGORITHMS, UnlearnConfig, oracle_recipe

SCHEMA_VERSION = 1
STRATEGY_KINDS = ("full", "del", "salloc", "criterion", "deepest", "shallowest", "critmem", "random")


def _build(cls, raw, where: str):
    """Instantiate a dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class DatasetConfig:
    """Either ``source`` (split into train/test) or explicit ``train``/``test`` sources."""

    source: dict | None = None
    train: dict | None = None
    test: dict | None = None
    test_fraction: float = 0.3
    split_seed: int = 0

    def __post_init__(self):
        if self.source is None and (self.train is None or self.test is None):
            raise ConfigError("dataset: give 'source' or both 'train' and 'test'")


@dataclass
class StrategyConfig:
    name: str
    kind: str
    alphas: list = field(default_factory=lambda: [1.0])
    h: int = 10
    criterion: str = "weighted_grad_forget"
    granularity: str = "channel"
    reference: str | None = None
    max_channels_per_example: int | None = None
    batch_size: int = 128

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"strategy {self.name!r}: unknown kind {self.kind!r}")
        if not self.alphas:
            raise ConfigError(f"strategy {self.name!r}: alphas must be non-empty")
        self.alphas = [float(a) for a in self.alphas]
        for a in self.alphas:
            if not 0 <= a <= 1:
                raise ConfigError(f"strategy {self.name!r}: alpha {a} outside [0, 1]")
        if self.kind == "full" and self.alphas != [1.0]:
            raise ConfigError(f"strategy {self.name!r}: kind 'full' only allows alpha 1.0")
        try:
            Criterion(self.criterion)
        except ValueError:
            raise ConfigError(f"strategy {self.name!r}: unknown criterion {self.criterion!r}") from None
        if self.granularity not in ("channel", "parameter"):
            raise ConfigError(f"strategy {self.name!r}: unknown granularity {self.granularity!r}")
        if self.kind == "random" and not self.reference:
            raise ConfigError(f"strategy {self.name!r}: kind 'random' needs a reference strategy")
        if self.h < 1:
            raise ConfigError(f"strategy {self.name!r}: h must be >= 1")


@dataclass
class AlgorithmConfig:
    name: str
    epochs: int = 5
    lr: float = 0.01
    lr_candidates: list = field(default_factory=list)
    schedule: str | None = None
    eta_min_frac: float | None = None
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 0.0
    l1_lambda: float = 0.0
    beta: float = 0.95

    def __post_init__(self):
        if self.name not in ALGORITHMS or self.name == "retrain_oracle":
            raise ConfigError(f"unknown unlearning algorithm {self.name!r}")
        self.lr_candidates = [float(x) for x in self.lr_candidates]
        # validates the remaining fields
        self.unlearn_config(seed=0)

    def unlearn_config(self, seed: int, lr: float | None = None):
        return UnlearnConfig(
            algorithm=self.name, epochs=self.epochs, lr=self.lr if lr is None else lr,
            schedule=self.schedule, eta_min_frac=self.eta_min_frac,
            batch_size=self.batch_size, momentum=self.momentum,
            weight_decay=self.weight_decay, l1_lambda=self.l1_lambda,
            beta=self.beta, seed=seed,
        )


@dataclass
class OracleConfig:
    epochs: int | None = None
    lr: float | None = None
    seed_offset: int = 1000


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    architecture: dict
    train: dict
    forget: dict
    strategies: list
    algorithms: list
    seeds: list
    schema_version: int = SCHEMA_VERSION
    name: str = "experiment"
    oracle: OracleConfig = field(default_factory=OracleConfig)
    validation_seed: int = 100
    mia_feature_kinds: list = field(default_factory=lambda: ["correctness", "confidence"])
    output_dir: str = "outputs"

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} is not supported "
                              f"(expected {SCHEMA_VERSION})")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            raise ConfigError("strategy names must be unique")
        by_name = {s.name: s for s in self.strategies}
        for s in self.strategies:
            if s.kind == "random":
                ref = by_name.get(s.reference)
                if ref is None:
                    raise ConfigError(f"strategy {s.name!r}: reference {s.reference!r} not defined")
                if ref.kind in ("random", "full"):
                    raise ConfigError(f"strategy {s.name!r}: cannot reference a {ref.kind} strategy")
        algos = [a.name for a in self.algorithms]
        if len(set(algos)) != len(algos):
            raise ConfigError("algorithm names must be unique")
        if not self.strategies or not self.algorithms:
            raise ConfigError("need at least one strategy and one algorithm")
        for k in self.mia_feature_kinds:
            if k not in ("correctness", "confidence"):
                raise ConfigError(f"unknown MIA feature kind {k!r}")
        ForgetSpec(**_strict_keys(self.forget, ForgetSpec, "forget"))
        TrainRecipe(**_strict_keys(self.train, TrainRecipe, "train"))

    # -- helpers

    def strategy(self, name: str) -> StrategyConfig:
        for s in self.strategies:
            if s.name == name:
                return s
        raise ConfigError(f"unknown strategy {name!r}")

    def algorithm(self, name: str) -> AlgorithmConfig:
        for a in self.algorithms:
            if a.name == name:
                return a
        raise ConfigError(f"unknown algorithm {name!r}")

    def forget_spec(self):
        return ForgetSpec(**self.forget)

    def train_recipe(self):
        return TrainRecipe(**self.train)

    def oracle_recipe(self):
        return oracle_recipe(self.train_recipe(), self.oracle.epochs, self.oracle.lr)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return dataclasses.replace(self, seeds=list(seeds))


def _strict_keys(raw: dict, cls, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return raw


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw = dict(raw)
    required = ("dataset", "architecture", "train", "forget", "strategies", "algorithms", "seeds")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ConfigError(f"config is missing keys {missing}")
    raw["dataset"] = _build(DatasetConfig, raw["dataset"], "dataset")
    raw["strategies"] = [_build(StrategyConfig, s, f"strategies[{i}]")
                         for i, s in enumerate(raw["strategies"])]
    raw["algorithms"] = [_build(AlgorithmConfig, a, f"algorithms[{i}]")
                         for i, a in enumerate(raw["algorithms"])]
    if "oracle" in raw:
        raw["oracle"] = _build(OracleConfig, raw["oracle"], "oracle")
    raw["seeds"] = [int(s) for s in raw["seeds"]]
    return _build(ExperimentConfig, raw, "config")


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(raw)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
