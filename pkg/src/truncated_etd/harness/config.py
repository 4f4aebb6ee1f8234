"""Experiment configuration: JSON documents with per-environment defaults."""

from __future__ import annotations

import copy
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from ..agents import (
    CONTROL_ALGORITHMS,
    ETD0,
    ETD_BETA,
    OFF_POLICY_TD,
    PREDICTION_ALGORITHMS,
    PTE_EXPECTED_SARSA,
    TRUNCATED_ETD,
    AgentConfig,
)

ENVIRONMENTS = ("baird", "cartpole")
PREDICTION = "prediction"
CONTROL_FIXED = "control-fixed-behavior"
CONTROL_CHANGING = "control-changing-behavior"
SETTINGS = (PREDICTION, CONTROL_FIXED, CONTROL_CHANGING)

LEARNING_RATES = [0.1 * 2.0**-k for k in range(20)]
BETAS = [0.1, 0.2, 0.4, 0.8]
DASHED_PROBS = [0.0, 0.02, 0.04, 0.06, 0.08, 0.1]
TEMPERATURES = [0.01, 0.1, 1.0]


class ConfigError(ValueError):
    pass


def _prediction_variants():
    return [
        {"algorithm": ETD0, "column": "n=inf"},
        {"algorithm": OFF_POLICY_TD, "column": "n=0"},
        {"algorithm": TRUNCATED_ETD, "n": 2, "column": "n=2"},
        {"algorithm": TRUNCATED_ETD, "n": 4, "column": "n=4"},
        {"algorithm": TRUNCATED_ETD, "n": 8, "column": "n=8"},
        {"algorithm": ETD_BETA, "beta": list(BETAS), "column": "beta"},
    ]


def _control_variants():
    return [
        {"algorithm": PTE_EXPECTED_SARSA, "column": "n=inf"},
        {"algorithm": PTE_EXPECTED_SARSA, "n": 0, "column": "n=0"},
        {"algorithm": PTE_EXPECTED_SARSA, "n": 2, "column": "n=2"},
        {"algorithm": PTE_EXPECTED_SARSA, "n": 4, "column": "n=4"},
        {"algorithm": PTE_EXPECTED_SARSA, "n": 8, "column": "n=8"},
        {"algorithm": PTE_EXPECTED_SARSA, "beta": list(BETAS), "column": "beta"},
    ]


@dataclass
class ExperimentConfig:
    """One sweep: every (target, variant, learning rate, seed) combination.

    ``targets`` are ``pi(dashed|s)`` values in the prediction setting and
    target-policy temperatures in the control settings.  Each entry of
    ``algorithms`` is an :class:`~truncated_etd.agents.AgentConfig` keyword
    set in which ``n`` and ``beta`` may be lists (expanded as a grid); entries
    sharing a ``column`` are tuned jointly and reported as one table column.
    """

    environment: str = "baird"
    setting: str = PREDICTION
    algorithms: list = field(default_factory=_prediction_variants)
    learning_rates: list = field(default_factory=lambda: list(LEARNING_RATES))
    targets: list = field(default_factory=lambda: list(DASHED_PROBS))
    seeds: int = 30
    steps: int = 100_000
    eval_points: int = 100
    eval_every: int = 5000
    eval_episodes: int = 10
    success_threshold: float = 5.0
    control_success_fraction: float = 0.5
    behavior_temperature: float = 1.0
    behavior_epsilon: Optional[float] = None
    projection_radius: Optional[float] = None
    output_dir: str = "results"
    workers: int = 1
    backend: str = "numba"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.environment not in ENVIRONMENTS:
            raise ConfigError(f"environment: expected one of {ENVIRONMENTS}, got {self.environment!r}")
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting: expected one of {SETTINGS}, got {self.setting!r}")
        if self.environment == "cartpole" and self.setting == PREDICTION:
            raise ConfigError("setting: cartpole only supports the control settings")
        for name in ("algorithms", "learning_rates", "targets"):
            if not getattr(self, name):
                raise ConfigError(f"{name}: grid must be non-empty")
        if any(not lr > 0 for lr in self.learning_rates):
            raise ConfigError("learning_rates: every entry must be > 0")
        if int(self.seeds) != self.seeds or self.seeds < 1:
            raise ConfigError(f"seeds: need an integer >= 1, got {self.seeds}")
        if self.steps < 1:
            raise ConfigError(f"steps: need >= 1, got {self.steps}")
        if not 1 <= self.eval_points <= self.steps:
            raise ConfigError(f"eval_points: need 1 <= eval_points <= steps, got {self.eval_points}")
        if self.environment == "cartpole" and not 1 <= self.eval_every <= self.steps:
            raise ConfigError(f"eval_every: need 1 <= eval_every <= steps, got {self.eval_every}")
        if self.workers < 1:
            raise ConfigError(f"workers: need >= 1, got {self.workers}")
        if self.backend not in ("numba", "python"):
            raise ConfigError(f"backend: expected 'numba' or 'python', got {self.backend!r}")
        allowed = PREDICTION_ALGORITHMS if self.setting == PREDICTION else CONTROL_ALGORITHMS
        for k, spec in enumerate(self.algorithms):
            if not isinstance(spec, dict) or "algorithm" not in spec:
                raise ConfigError(f"algorithms[{k}]: need a mapping with an 'algorithm' key")
            if spec["algorithm"] not in allowed:
                raise ConfigError(
                    f"algorithms[{k}].algorithm: {spec['algorithm']!r} is not valid for "
                    f"setting {self.setting!r}; expected one of {allowed}"
                )
            try:
                for variant in expand_variant(spec):
                    AgentConfig(learning_rate=self.learning_rates[0], **variant)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"algorithms[{k}]: {err}") from None

    @property
    def is_control(self) -> bool:
        return self.setting != PREDICTION

    def resolved_behavior_epsilon(self) -> float:
        if self.behavior_epsilon is not None:
            return self.behavior_epsilon
        if self.environment == "cartpole":
            return 0.95
        return 0.9 if self.setting == CONTROL_CHANGING else 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        base = defaults(doc.get("environment", "baird"), doc.get("setting", PREDICTION))
        merged = {**base.to_dict(), **doc}
        return cls(**merged)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(doc)


def expand_variant(spec: dict) -> list:
    """Grid-expand list-valued ``n`` / ``beta``; drops the ``column`` key."""
    spec = {k: v for k, v in spec.items() if k != "column"}
    keys = [k for k in ("n", "beta") if isinstance(spec.get(k), list)]
    if not keys:
        return [spec]
    out = []
    for combo in itertools.product(*(spec[k] for k in keys)):
        variant = copy.deepcopy(spec)
        variant.update(dict(zip(keys, combo)))
        out.append(variant)
    return out


def column_of(spec: dict) -> str:
    if "column" in spec:
        return str(spec["column"])
    parts = [spec["algorithm"]]
    for key in ("n", "beta"):
        if key in spec:
            parts.append(f"{key}={spec[key]}")
    return ",".join(parts)


def defaults(environment: str = "baird", setting: str = PREDICTION) -> ExperimentConfig:
    """The full-scale default grid for an environment and setting."""
    if environment == "baird" and setting == PREDICTION:
        return ExperimentConfig()
    if environment == "baird":
        return ExperimentConfig(
            environment="baird",
            setting=setting,
            algorithms=_control_variants(),
            targets=list(TEMPERATURES),
        )
    if environment == "cartpole":
        setting = setting if setting != PREDICTION else CONTROL_CHANGING
        variants = [v for v in _control_variants() if v["column"] != "n=8"]
        return ExperimentConfig(
            environment="cartpole",
            setting=setting,
            algorithms=variants,
            targets=[0.01],
        )
    raise ConfigError(f"environment: expected one of {ENVIRONMENTS}, got {environment!r}")
