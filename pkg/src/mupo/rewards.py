"""Per-rollout reward: accuracy, format, and the accuracy-gated diversity bonus."""

import math

import numpy as np

from .config import GroupPartition, RewardBreakdown
from .embedding import cosine_distance_matrix

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"


def lambda_schedule(t_cur, t_max, lambda_max=0.4, lambda_min=0.1):
    """Cosine-annealed diversity weight, ``lambda_max`` at step 0 down to ``lambda_min`` at ``t_max``."""
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    if t_cur < 0 or t_cur > t_max:
        raise ValueError(f"t_cur={t_cur} outside [0, t_max={t_max}]")
    return lambda_min + (lambda_max - lambda_min) / 2.0 * (1.0 + math.cos(math.pi * t_cur / t_max))


def diversity_rewards(partition: GroupPartition, E) -> np.ndarray:
    """Mean cosine distance from each rollout to every rollout outside its group.

    Rollouts whose group spans the whole batch get 0.
    """
    E = np.asarray(E, dtype=float)
    labels = partition.as_array()
    if E.shape[0] != labels.shape[0]:
        raise ValueError(f"partition covers {labels.shape[0]} rollouts, embeddings have {E.shape[0]}")
    D = cosine_distance_matrix(E)
    outside = labels[:, None] != labels[None, :]
    counts = outside.sum(axis=1)
    sums = np.where(outside, D, 0.0).sum(axis=1)
    out = np.zeros(len(labels))
    np.divide(sums, counts, out=out, where=counts > 0)
    return out


def diversity_reward(i, partition: GroupPartition, E) -> float:
    E = np.asarray(E, dtype=float)
    labels = partition.as_array()
    others = np.flatnonzero(labels != labels[i])
    if others.size == 0:
        return 0.0
    return float(cosine_distance_matrix(E[i:i + 1], E[others]).mean())


def total_reward(correct, well_formed, r_div, lam, fmt_scale=1.0) -> RewardBreakdown:
    """Accuracy + format + ``lam * r_div``, the last term only for correct rollouts."""
    r_acc = 1 if correct else 0
    r_fmt = 1 if well_formed else 0
    bonus = lam * r_div if r_acc == 1 else 0.0
    total = r_acc + fmt_scale * r_fmt + bonus
    return RewardBreakdown(r_acc=r_acc, r_fmt=r_fmt, r_div=float(r_div), lam=float(lam), total=total)


def verify_format(text, open_tag=THINK_OPEN, close_tag=THINK_CLOSE) -> bool:
    if not open_tag or not close_tag:
        raise ValueError("tags must be non-empty")
    if text.count(open_tag) != 1 or text.count(close_tag) != 1:
        return False
    return text.index(open_tag) + len(open_tag) <= text.index(close_tag)


def extract_reasoning(text, open_tag=THINK_OPEN, close_tag=THINK_CLOSE) -> str:
    """Text between the reasoning tags, or the whole text when they are missing."""
    start = text.find(open_tag)
    if start < 0:
        return text
    start += len(open_tag)
    end = text.find(close_tag, start)
    if end < 0:
        return text
    return text[start:end]
