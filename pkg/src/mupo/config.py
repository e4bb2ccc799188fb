"""Shared domain types and configuration handling."""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

ADVANTAGE_SCOPES = ("group_local", "global")


class ConfigError(ValueError):
    """Raised when a configuration field is out of range."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: int
    r_fmt: int
    r_div: float
    lam: float
    total: float


@dataclass(frozen=True)
class RolloutRecord:
    """One sampled response together with its verdicts and reasoning embedding."""

    rollout_id: int
    example_id: str
    token_count: int
    correct: bool
    well_formed: bool
    embedding: Optional[np.ndarray] = None
    reward: Optional[RewardBreakdown] = None
    group: Optional[int] = None

    def __post_init__(self):
        if self.rollout_id < 0:
            raise ValueError("rollout_id must be non-negative")
        if self.token_count < 1:
            raise ValueError("token_count must be >= 1")
        if self.embedding is not None:
            emb = np.array(self.embedding, dtype=float)
            if abs(np.linalg.norm(emb) - 1.0) > 1e-9:
                raise ValueError("embedding must have unit norm")
            emb.flags.writeable = False
            object.__setattr__(self, "embedding", emb)
        if self.group is not None and self.group < 0:
            raise ValueError("group must be non-negative")

    def with_(self, **changes) -> "RolloutRecord":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class GroupPartition:
    """Assignment of N rollouts (by position) to K non-empty groups.

    ``labels[i]`` is the group of rollout ``i``.
    """

    labels: tuple
    K: int

    @property
    def N(self) -> int:
        return len(self.labels)

    @property
    def group_sizes(self) -> tuple:
        counts = [0] * self.K
        for g in self.labels:
            counts[g] += 1
        return tuple(counts)

    @property
    def assignments(self) -> dict:
        return {i: g for i, g in enumerate(self.labels)}

    def members(self, k: int) -> list:
        return [i for i, g in enumerate(self.labels) if g == k]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=int)

    @classmethod
    def from_labels(cls, labels, K: Optional[int] = None) -> "GroupPartition":
        labels = tuple(int(g) for g in labels)
        if K is None:
            K = max(labels) + 1
        return cls(labels=labels, K=K)

    @classmethod
    def single(cls, n: int) -> "GroupPartition":
        return cls(labels=(0,) * n, K=1)


def check_partition(partition: GroupPartition, g_min: int = 1) -> None:
    """Raise AssertionError unless the partition is well formed."""
    assert partition.K >= 1, "K must be positive"
    assert partition.N >= 1, "empty partition"
    for g in partition.labels:
        assert 0 <= g < partition.K, f"group index {g} outside [0, {partition.K})"
    sizes = partition.group_sizes
    assert sum(sizes) == partition.N, "group sizes do not sum to N"
    assert all(s >= 1 for s in sizes), f"empty group in sizes {sizes}"
    assert all(s >= g_min for s in sizes), f"group smaller than G_min={g_min}: {sizes}"


@dataclass(frozen=True)
class MupoConfig:
    N: int = 15
    K: int = 3
    G_min: int = 3
    beta: float = 1.0
    lambda_max: float = 0.4
    lambda_min: float = 0.1
    t_max: int = 200
    clip_eps: float = 0.2
    std_floor: float = 1e-6
    advantage_scope: str = "group_local"
    sample_std: bool = False
    seed: int = 0
    # set by validate_config when K had to be lowered
    k_reduced_from: Optional[int] = field(default=None, compare=True)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


CONFIG_FIELDS = tuple(f.name for f in fields(MupoConfig) if f.name != "k_reduced_from")


def validate_config(cfg: MupoConfig) -> MupoConfig:
    """Check ranges and make K feasible for the minimum group size.

    When ``K * G_min > N`` the group count is lowered to ``max(1, N // G_min)``
    and ``k_reduced_from`` records the requested value.
    """
    if cfg.N < 1:
        raise ConfigError("N", "must be >= 1")
    if cfg.G_min < 1:
        raise ConfigError("G_min", "must be >= 1")
    if cfg.K < 1:
        raise ConfigError("K", "must be >= 1")
    if cfg.beta < 0:
        raise ConfigError("beta", "must be >= 0")
    if cfg.lambda_min < 0:
        raise ConfigError("lambda_min", "must be >= 0")
    if cfg.lambda_min > cfg.lambda_max:
        raise ConfigError("lambda_min", "lambda_min > lambda_max")
    if cfg.t_max < 1:
        raise ConfigError("t_max", "must be >= 1")
    if not 0 < cfg.clip_eps < 1:
        raise ConfigError("clip_eps", "must be in (0, 1)")
    if cfg.std_floor < 0:
        raise ConfigError("std_floor", "must be >= 0")
    if cfg.advantage_scope not in ADVANTAGE_SCOPES:
        raise ConfigError("advantage_scope", f"must be one of {ADVANTAGE_SCOPES}")

    if cfg.K * cfg.G_min > cfg.N:
        new_k = max(1, cfg.N // cfg.G_min)
        warnings.warn(
            f"K={cfg.K} infeasible with N={cfg.N}, G_min={cfg.G_min}; using K={new_k}",
            stacklevel=2,
        )
        return dataclasses.replace(cfg, K=new_k, k_reduced_from=cfg.K)
    return cfg


def _coerce(name: str, value: Any) -> Any:
    target = {f.name: f.type for f in fields(MupoConfig)}[name]
    if target in ("int", int):
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return int(value)
    if target in ("float", float):
        return float(value)
    if target in ("bool", bool):
        if isinstance(value, str):
            lowered = value.strip().lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ConfigError(name, f"expected a boolean, got {value!r}")
        return bool(value)
    return str(value)


def config_from_mapping(values: Mapping[str, Any], base: Optional[MupoConfig] = None) -> MupoConfig:
    """Overlay ``values`` on ``base`` (defaults when omitted); unknown keys are errors."""
    base = base or MupoConfig()
    updates = {}
    for key, value in values.items():
        if key not in CONFIG_FIELDS:
            raise ConfigError(key, "unknown configuration field")
        if value is None:
            continue
        updates[key] = _coerce(key, value)
    return dataclasses.replace(base, **updates)


def load_config_file(path) -> dict:
    """Read a flat ``key: value`` YAML document into a plain dict."""
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("<file>", "config file must be a flat key/value mapping")
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise ConfigError(str(key), "nested values are not allowed")
    return data


def dump_config_file(cfg: MupoConfig, path) -> None:
    data = {name: getattr(cfg, name) for name in CONFIG_FIELDS}
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False))
