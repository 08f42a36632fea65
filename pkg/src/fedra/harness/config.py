"""Experiment configuration, method mapping and scenario presets.

Config files are JSON objects whose keys are :class:`ExperimentConfig` field
names; unknown keys are rejected. Resolution order: defaults, then the
preset named by ``preset``, then the file, then CLI overrides.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..allocation import Strategy
from ..federation import MissingLayerStrategy, RoundConfig

METHODS = {
    # name: (strategy, missing, dynamic)
    "FedRA": (Strategy.RANDOM_UNIFORM, None, False),
    "FedRA-Constrained": (Strategy.RANDOM_UNIFORM, MissingLayerStrategy.CONSTRAIN, False),
    "DepthPrefix": (Strategy.DEPTH_PREFIX, None, False),
    "AllLarge": (Strategy.ALL_LARGE, None, False),
    "AllSmall": (Strategy.ALL_SMALL, None, False),
    "Dynamic": (Strategy.RANDOM_UNIFORM, None, True),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str | None = None
    # scenario
    mode: str = "feature"
    capacities: tuple[int, ...] = (8, 6, 5, 4, 3, 2)
    alpha: float = 0.5
    parts: int = 5
    dynamic: bool = False
    # synthetic data
    num_domains: int = 6
    num_classes: int = 10
    d_in: int = 32
    n_per_domain: int = 750
    class_spread: float = 0.6
    domain_rotation: float = 1.0
    domain_shift: float = 0.3
    domain_noise: float = 0.2
    # model
    L: int = 8
    d: int = 32
    rank: int = 4
    lora_scale: float = 1.0
    activation: str = "relu"
    base_gain: float = 0.6
    # training
    rounds: int = 60
    lr: float = 0.01
    local_epochs: int = 1
    batch_size: int = 32
    clients_per_round: int = 6
    method: str = "FedRA"
    missing: str = "carry"
    seeds: tuple[int, ...] = (0,)
    log_gradnorm: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(int(c) for c in self.capacities))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.missing not in ("carry", "constrain"):
            raise ConfigError(f"missing must be 'carry' or 'constrain', got {self.missing!r}")
        if self.mode not in ("feature", "feature_label"):
            raise ConfigError(f"mode must be 'feature' or 'feature_label', got {self.mode!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.capacities and (min(self.capacities) < 1 or max(self.capacities) > self.L):
            raise ConfigError(f"capacities {list(self.capacities)} must lie in [1, L={self.L}]")
        expected = self.num_domains * (self.parts if self.mode == "feature_label" else 1)
        if len(self.capacities) != expected:
            raise ConfigError(f"{self.mode} scenario with {self.num_domains} domains needs "
                              f"{expected} capacities, got {len(self.capacities)}")
        if self.clients_per_round > expected:
            raise ConfigError(f"clients_per_round={self.clients_per_round} exceeds {expected} clients")

    def round_config(self) -> RoundConfig:
        strategy, missing, dynamic = METHODS[self.method]
        missing = missing or MissingLayerStrategy(self.missing)
        try:
            return RoundConfig(
                lr=self.lr, local_epochs=self.local_epochs, batch_size=self.batch_size,
                clients_per_round=self.clients_per_round, strategy=strategy, missing=missing,
                dynamic=dynamic or self.dynamic, log_gradnorm=self.log_gradnorm,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["capacities"] = list(self.capacities)
        d["seeds"] = list(self.seeds)
        return d

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return replace(self, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


PRESETS: dict[str, dict] = {
    # six feature-skew clients, strictly decreasing depth
    "table1-desk": dict(mode="feature", capacities=(8, 6, 5, 4, 3, 2)),
    # five Dirichlet shards per domain; shards of a domain share its depth
    "table2-desk": dict(mode="feature_label", alpha=0.5, parts=5,
                        capacities=tuple(c for c in (8, 6, 5, 4, 3, 2) for _ in range(5))),
    # every client smaller than the server model
    "table3-desk": dict(mode="feature", capacities=(6, 6, 4, 4, 3, 3)),
    # depth redrawn from 1..L every round
    "table4-desk": dict(mode="feature", capacities=(8, 6, 5, 4, 3, 2), dynamic=True),
}


def apply_preset(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return cfg.with_overrides(preset=name, **PRESETS[name])


def load_config(path=None, preset=None, **overrides) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    preset = preset or raw.pop("preset", None)
    base: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        base.update(PRESETS[preset], preset=preset)
    base.update(raw)
    base.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(base) - {f.name for f in fields(ExperimentConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        return ExperimentConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

