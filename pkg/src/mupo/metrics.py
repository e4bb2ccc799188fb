"""Evaluation metrics: acc@k, diversity curves, EMA smoothing."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .embedding import pairwise_diversity


@dataclass
class SampleSet:
    """Per-example verdicts (and optionally embeddings), in sampling order."""

    verdicts: Dict[str, List[bool]]
    embeddings: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for ex, v in self.verdicts.items():
            if len(v) < 1:
                raise ValueError(f"example {ex!r} has no responses")


def acc_at_k(samples, k) -> float:
    """Fraction of examples with at least one correct answer among their first k responses."""
    verdicts = samples.verdicts if isinstance(samples, SampleSet) else samples
    if k < 1:
        raise ValueError("k must be >= 1")
    if not verdicts:
        raise ValueError("no examples")
    hits = 0
    for ex, v in verdicts.items():
        if len(v) < k:
            raise ValueError(f"example {ex!r} has {len(v)} responses, fewer than k={k}")
        hits += any(v[:k])
    return hits / len(verdicts)


def ema_smooth(series, alpha=0.1) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("empty series")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    if alpha == 1:
        return series.copy()
    out = np.empty_like(series)
    out[0] = series[0]
    for t in range(1, series.size):
        x, prev = series[t], out[t - 1]
        # incremental form is exact on constant input; clamp guards round-off
        y = prev + alpha * (x - prev)
        out[t] = min(max(y, min(x, prev)), max(x, prev))
    return out


def diversity_curve(per_step_embeddings) -> np.ndarray:
    return np.array([pairwise_diversity(E) for E in per_step_embeddings])


def example_diversity(samples: SampleSet) -> Dict[str, Optional[float]]:
    """Pairwise diversity per example; None where fewer than two embeddings exist."""
    out = {}
    for ex in samples.verdicts:
        E = samples.embeddings.get(ex)
        out[ex] = pairwise_diversity(E) if E is not None and len(E) >= 2 else None
    return out
