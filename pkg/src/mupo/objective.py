"""Advantage estimation and clipped surrogate objectives for GRPO and MUPO."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import GroupPartition


@dataclass(frozen=True)
class AdvantageSet:
    """Per-rollout advantages in rollout order.

    ``labels`` holds the group of each rollout when the advantages were
    normalized per group, and is None for a single global scope.
    """

    values: np.ndarray
    scope: str
    std_floor_hits: int = 0
    labels: Optional[tuple] = None

    @property
    def per_rollout(self) -> dict:
        return {i: float(a) for i, a in enumerate(self.values)}

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class SurrogateInputs:
    """Ratios, advantages, and clip width for one batch.

    Each entry of ``ratios`` is either a scalar sequence-level ratio or an
    array of per-token ratios of length ``token_counts[i]``.
    """

    ratios: Sequence
    advantages: AdvantageSet
    clip_eps: float = 0.2
    token_counts: Optional[Sequence[int]] = None

    def __post_init__(self):
        if len(self.ratios) != len(self.advantages):
            raise ValueError(
                f"{len(self.ratios)} ratios for {len(self.advantages)} advantages"
            )
        for r in self.ratios:
            if np.any(np.asarray(r) <= 0):
                raise ValueError("ratios must be strictly positive")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")


def _normalize(rewards, std_floor, ddof):
    std = rewards.std(ddof=ddof)
    if not std >= std_floor:
        return np.zeros_like(rewards), 1
    return (rewards - rewards.mean()) / std, 0


def grpo_advantages(rewards, std_floor=1e-6, ddof=0) -> AdvantageSet:
    """Group-normalized advantages ``(R - mean) / std`` over the whole batch.

    Uses the population std by default (``ddof=0``). If the std falls below
    ``std_floor`` all advantages are zero.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim != 1 or rewards.size < 2:
        raise ValueError("need at least 2 rewards to normalize")
    values, hits = _normalize(rewards, std_floor, ddof)
    return AdvantageSet(values=values, scope="global", std_floor_hits=hits)


def mupo_advantages(rewards, partition: GroupPartition, scope="group_local",
                    std_floor=1e-6, ddof=0) -> AdvantageSet:
    rewards = np.asarray(rewards, dtype=float)
    labels = partition.as_array()
    if rewards.shape != labels.shape:
        raise ValueError(f"{rewards.size} rewards for a partition of {labels.size}")
    if scope == "global":
        base = grpo_advantages(rewards, std_floor, ddof)
        return AdvantageSet(base.values, "global", base.std_floor_hits, partition.labels)
    if scope != "group_local":
        raise ValueError(f"unknown advantage scope {scope!r}")
    values = np.empty_like(rewards)
    hits = 0
    for k in range(partition.K):
        idx = np.flatnonzero(labels == k)
        if idx.size < 2:
            raise ValueError(f"advantage undefined in singleton group {k}")
        values[idx], h = _normalize(rewards[idx], std_floor, ddof)
        hits += h
    return AdvantageSet(values, "group_local", hits, partition.labels)


def load_balance_weight(N, K, group_size, beta) -> float:
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    return float((N / (K * group_size)) ** beta)


def clipped_surrogate(ratio, advantage, clip_eps):
    """``min(r * A, clip(r, 1 - eps, 1 + eps) * A)``, elementwise."""
    ratio = np.asarray(ratio, dtype=float)
    out = np.minimum(ratio * advantage, np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * advantage)
    return float(out) if out.ndim == 0 else out


def _rollout_terms(inputs: SurrogateInputs) -> np.ndarray:
    # token-level terms are averaged per rollout; a scalar ratio is one term
    adv = inputs.advantages.values
    return np.array([
        np.mean(clipped_surrogate(r, a, inputs.clip_eps)) for r, a in zip(inputs.ratios, adv)
    ])


def grpo_objective(inputs: SurrogateInputs) -> float:
    n = len(inputs.ratios)
    if n == 0:
        raise ValueError("empty batch")
    terms = _rollout_terms(inputs)
    return float(terms.sum() / n)


def group_coefficients(partition: GroupPartition, beta) -> np.ndarray:
    """Per-rollout factor ``w_k / |G_k|`` of the multi-group objective."""
    sizes = partition.group_sizes
    weights = [load_balance_weight(partition.N, partition.K, s, beta) for s in sizes]
    return np.array([weights[g] / sizes[g] for g in partition.labels])


def mupo_objective(inputs: SurrogateInputs, partition: GroupPartition, beta=1.0) -> float:
    """Load-balanced sum of per-group GRPO objectives."""
    adv = inputs.advantages
    if len(adv) != partition.N:
        raise ValueError(f"{len(adv)} advantages for a partition of {partition.N}")
    if adv.labels is not None and tuple(adv.labels) != tuple(partition.labels):
        raise ValueError("advantages were computed with a different partition")
    terms = _rollout_terms(inputs)
    labels = partition.as_array()
    total = 0.0
    for k, size in enumerate(partition.group_sizes):
        w = load_balance_weight(partition.N, partition.K, size, beta)
        total += w * (terms[labels == k].sum() / size)
    return float(total)


def surrogate_logratio_grad(ratio, advantage, clip_eps):
    """Derivative of ``clipped_surrogate`` with respect to ``log(ratio)``.

    The unclipped branch contributes ``A * r``; where the clipped branch is
    the strict minimum the derivative is zero.
    """
    ratio = np.asarray(ratio, dtype=float)
    unclipped = ratio * advantage
    clipped = np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * advantage
    return np.where(unclipped <= clipped, unclipped, 0.0)
