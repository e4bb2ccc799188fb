"""Desk-scale policy-optimization testbed.

A factorized categorical policy over length-T action sequences is trained
with GRPO or MUPO against a reward landscape made of Hamming balls
("modes") around prototype sequences. Everything is seeded: the batch,
the validation sample, and every accuracy draw use generators derived from
``(seed, step, stream[, rollout])``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import log_softmax, softmax

from .config import GroupPartition, MupoConfig, validate_config
from .embedding import pairwise_diversity
from .grouping import constrained_kmeans
from .objective import (
    SurrogateInputs,
    group_coefficients,
    grpo_advantages,
    grpo_objective,
    mupo_advantages,
    mupo_objective,
    surrogate_logratio_grad,
)
from .rewards import diversity_rewards, lambda_schedule, total_reward

ENUMERATION_LIMIT = 10**6
LOGIT_BOUND = 1e6
VALIDATION_SAMPLES = 10
DEFAULT_LEARNING_RATE = 0.1

# generator stream ids
_BATCH, _REWARD, _VALIDATION = 0, 1, 2


@dataclass(frozen=True)
class ModeSpec:
    prototype: tuple
    radius: int = 0
    success_prob: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "prototype", tuple(int(a) for a in self.prototype))
        if self.radius < 0 or self.radius >= len(self.prototype):
            raise ValueError("radius must be in [0, T)")
        if not 0.0 <= self.success_prob <= 1.0:
            raise ValueError("success_prob must be in [0, 1]")


@dataclass(frozen=True)
class LandscapeConfig:
    """Alphabet size, horizon, modes, and the initial logits of the policy.

    ``init_logits`` defaults to all zeros. ``steps`` and ``learning_rate``
    are the recommended run settings for canned landscapes.
    """

    A: int
    T: int
    modes: tuple = ()
    init_logits: Optional[tuple] = None
    name: str = "custom"
    steps: int = 200
    learning_rate: float = DEFAULT_LEARNING_RATE

    def __post_init__(self):
        if self.A < 1 or self.T < 1:
            raise ValueError("A and T must be positive")
        modes = tuple(m if isinstance(m, ModeSpec) else ModeSpec(**m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        for m in modes:
            if len(m.prototype) != self.T or max(m.prototype) >= self.A or min(m.prototype) < 0:
                raise ValueError(f"prototype {m.prototype} is not a valid trajectory")
        if modes:
            rmax = max(m.radius for m in modes)
            for a, b in itertools.combinations(modes, 2):
                if hamming(a.prototype, b.prototype) <= 2 * rmax:
                    raise ValueError("mode balls overlap")
        if self.init_logits is not None:
            arr = np.asarray(self.init_logits, dtype=float)
            if arr.shape != (self.T, self.A):
                raise ValueError(f"init_logits must have shape ({self.T}, {self.A})")
            object.__setattr__(self, "init_logits", tuple(map(tuple, arr.tolist())))

    @property
    def D(self):
        return self.A * self.T

    def initial_logits(self) -> np.ndarray:
        if self.init_logits is None:
            return np.zeros((self.T, self.A))
        return np.array(self.init_logits, dtype=float)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["modes"] = [dataclasses.asdict(m) for m in self.modes]
        for m in d["modes"]:
            m["prototype"] = list(m["prototype"])
        if d["init_logits"] is not None:
            d["init_logits"] = [list(r) for r in d["init_logits"]]
        return d

    @classmethod
    def from_dict(cls, d) -> "LandscapeConfig":
        d = dict(d)
        d["modes"] = tuple(ModeSpec(**m) for m in d.get("modes", ()))
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown landscape fields: {sorted(unknown)}")
        return cls(**d)


def hamming(a, b) -> int:
    return int(np.sum(np.asarray(a) != np.asarray(b)))


def canned_landscapes() -> dict:
    text = resources.files("mupo").joinpath("data/landscapes.json").read_text()
    return {name: LandscapeConfig.from_dict({"name": name, **spec})
            for name, spec in json.loads(text).items()}


def load_landscape(name_or_path) -> LandscapeConfig:
    """A canned landscape by name, or a JSON file describing one."""
    canned = canned_landscapes()
    if name_or_path in canned:
        return canned[name_or_path]
    path = Path(name_or_path)
    if not path.is_file():
        raise ValueError(f"unknown landscape {name_or_path!r} (canned: {sorted(canned)})")
    data = json.loads(path.read_text())
    data.setdefault("name", path.stem)
    return LandscapeConfig.from_dict(data)


@dataclass
class TabularPolicy:
    """Independent categorical distribution per position, ``softmax(logits / temperature)``."""

    logits: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=float)
        if self.logits.ndim != 2:
            raise ValueError("logits must be a T x A matrix")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def T(self):
        return self.logits.shape[0]

    @property
    def A(self):
        return self.logits.shape[1]

    def probs(self) -> np.ndarray:
        return softmax(self.logits / self.temperature, axis=1)

    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits / self.temperature, axis=1)

    def token_log_probs(self, trajs) -> np.ndarray:
        """(N, T) log-probabilities of each chosen action."""
        trajs = np.asarray(trajs)
        return self.log_probs()[np.arange(self.T), trajs]

    def log_prob(self, trajs) -> np.ndarray:
        return self.token_log_probs(trajs).sum(axis=-1)

    def sample(self, n, rng) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        cdf = np.cumsum(self.probs(), axis=1)
        u = rng.random((n, self.T))
        trajs = np.empty((n, self.T), dtype=int)
        for t in range(self.T):
            trajs[:, t] = np.searchsorted(cdf[t], u[:, t], side="right")
        return np.minimum(trajs, self.A - 1)

    def snapshot_hash(self) -> str:
        return hashlib.sha256(self.logits.tobytes()).hexdigest()[:16]


def sample_batch(policy: TabularPolicy, n, rng):
    trajs = policy.sample(n, rng)
    return trajs, policy.log_prob(trajs)


def _check_trajectory(traj, land: LandscapeConfig):
    traj = np.asarray(traj)
    if traj.shape != (land.T,) or traj.min() < 0 or traj.max() >= land.A:
        raise ValueError(f"malformed trajectory {traj.tolist()} for A={land.A}, T={land.T}")
    return traj


def trajectory_embedding(traj, land: LandscapeConfig) -> np.ndarray:
    """Unit-norm one-hot position/action encoding; h differing positions give distance h/T."""
    traj = _check_trajectory(traj, land)
    v = np.zeros(land.D)
    v[np.arange(land.T) * land.A + traj] = 1.0 / np.sqrt(land.T)
    return v


def batch_embeddings(trajs, land: LandscapeConfig) -> np.ndarray:
    trajs = np.asarray(trajs)
    E = np.zeros((trajs.shape[0], land.D))
    cols = np.arange(land.T) * land.A + trajs
    np.put_along_axis(E, cols, 1.0 / np.sqrt(land.T), axis=1)
    return E


def mode_of(traj, land: LandscapeConfig) -> Optional[int]:
    for k, m in enumerate(land.modes):
        if hamming(traj, m.prototype) <= m.radius:
            return k
    return None


def trajectory_reward(traj, land: LandscapeConfig, rng):
    """(correct, well_formed) for one trajectory; correctness is a seeded draw."""
    traj = _check_trajectory(traj, land)
    k = mode_of(traj, land)
    u = rng.random()
    correct = k is not None and u < land.modes[k].success_prob
    return bool(correct), True


def all_trajectories(land: LandscapeConfig) -> np.ndarray:
    if land.A**land.T > ENUMERATION_LIMIT:
        raise ValueError(f"state space too large to enumerate: {land.A}**{land.T}")
    return np.array(list(itertools.product(range(land.A), repeat=land.T)), dtype=int)


def success_table(land: LandscapeConfig, trajs=None) -> np.ndarray:
    trajs = all_trajectories(land) if trajs is None else trajs
    p = np.zeros(len(trajs))
    for m in land.modes:
        inside = (trajs != np.asarray(m.prototype)).sum(axis=1) <= m.radius
        p[inside] = m.success_prob
    return p


def exact_expected_reward(policy: TabularPolicy, land: LandscapeConfig) -> float:
    """Expected accuracy reward by enumerating every trajectory."""
    trajs = all_trajectories(land)
    if not land.modes:
        return 0.0
    prob = np.exp(policy.log_prob(trajs))
    return float(prob @ success_table(land, trajs))


@dataclass(frozen=True)
class StepBatch:
    """Everything the update at one step depends on."""

    trajs: np.ndarray
    advantages: np.ndarray
    coefficients: np.ndarray
    partition: GroupPartition


def step_objective(logits, old_logits, batch: StepBatch, clip_eps, temperature=1.0):
    """Surrogate objective of ``logits`` against the sampling policy ``old_logits``.

    Per-token ratios; each rollout's term is the mean of its token terms and is
    scaled by its group coefficient ``w_k / |G_k|``.
    """
    new = TabularPolicy(logits, temperature).token_log_probs(batch.trajs)
    old = TabularPolicy(old_logits, temperature).token_log_probs(batch.trajs)
    ratios = np.exp(new - old)
    T = batch.trajs.shape[1]
    terms = np.minimum(
        ratios * batch.advantages[:, None],
        np.clip(ratios, 1 - clip_eps, 1 + clip_eps) * batch.advantages[:, None],
    ).sum(axis=1) / T
    return float(np.sum(batch.coefficients * terms))


def step_gradient(logits, old_logits, batch: StepBatch, clip_eps, temperature=1.0):
    """Analytic gradient of :func:`step_objective` with respect to ``logits``."""
    policy = TabularPolicy(logits, temperature)
    new = policy.token_log_probs(batch.trajs)
    old = TabularPolicy(old_logits, temperature).token_log_probs(batch.trajs)
    ratios = np.exp(new - old)
    n, T = batch.trajs.shape
    g = surrogate_logratio_grad(ratios, batch.advantages[:, None], clip_eps)
    weights = batch.coefficients[:, None] * g / T  # (n, T)
    probs = policy.probs()
    grad = np.zeros_like(probs)
    for t in range(T):
        np.add.at(grad[t], batch.trajs[:, t], weights[:, t])
        grad[t] -= weights[:, t].sum() * probs[t]
    return grad / temperature


@dataclass
class TrainLog:
    algo: str
    records: list = field(default_factory=list)
    final_logits: Optional[np.ndarray] = None
    final_validation: Optional[np.ndarray] = None

    def series(self, key) -> np.ndarray:
        return np.array([r[key] for r in self.records], dtype=float)

    def __len__(self):
        return len(self.records)


LOG_FIELDS = (
    "step",
    "mean_r_acc",
    "mean_r_div",
    "lambda",
    "objective",
    "validation_diversity",
    "expected_reward_exact",
    "policy_hash",
)


def _rng(seed, *key):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *key])


def build_step_batch(algo, trajs, land, cfg: MupoConfig, lam, step, seed):
    """Score a sampled batch and return (StepBatch, objective, diagnostics)."""
    n = trajs.shape[0]
    verdicts = [trajectory_reward(tr, land, _rng(seed, step, _REWARD, i)) for i, tr in enumerate(trajs)]
    correct = np.array([c for c, _ in verdicts])
    well_formed = np.array([w for _, w in verdicts])
    ddof = 1 if cfg.sample_std else 0
    if algo == "mupo":
        E = batch_embeddings(trajs, land)
        partition = constrained_kmeans(E, cfg)
        r_div = diversity_rewards(partition, E)
        breakdown = [total_reward(c, w, d, lam) for c, w, d in zip(correct, well_formed, r_div)]
        rewards = np.array([b.total for b in breakdown])
        adv = mupo_advantages(rewards, partition, cfg.advantage_scope, cfg.std_floor, ddof)
        coef = group_coefficients(partition, cfg.beta)
        gated_div = float(np.mean(correct * r_div))
    elif algo == "grpo":
        partition = GroupPartition.single(n)
        rewards = correct.astype(float) + well_formed.astype(float)
        adv = grpo_advantages(rewards, cfg.std_floor, ddof)
        coef = np.full(n, 1.0 / n)
        gated_div = 0.0
    else:
        raise ValueError(f"unknown algorithm {algo!r}")

    ratios = [np.ones(land.T)] * n
    inputs = SurrogateInputs(ratios, adv, cfg.clip_eps, [land.T] * n)
    if algo == "mupo":
        objective = mupo_objective(inputs, partition, cfg.beta)
    else:
        objective = grpo_objective(inputs)
    batch = StepBatch(trajs=trajs, advantages=adv.values, coefficients=coef, partition=partition)
    diag = {"mean_r_acc": float(correct.mean()), "mean_r_div": gated_div}
    return batch, objective, diag


def train(algo, cfg: MupoConfig, land: LandscapeConfig, steps=None, learning_rate=None,
          seed=None, exact=True, temperature=1.0) -> TrainLog:
    """Run ``steps`` updates and log steps ``0..steps`` (``steps + 1`` records).

    The diversity weight follows the cosine schedule over the run, so the
    schedule horizon is ``steps``. Each record describes the policy before
    that step's update; the final record describes the trained policy.
    """
    steps = land.steps if steps is None else steps
    learning_rate = land.learning_rate if learning_rate is None else learning_rate
    seed = cfg.seed if seed is None else seed
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = validate_config(dataclasses.replace(cfg, t_max=steps))
    if exact and land.A**land.T > ENUMERATION_LIMIT:
        exact = False

    policy = TabularPolicy(land.initial_logits(), temperature)
    log = TrainLog(algo=algo)
    for step in range(steps + 1):
        lam = lambda_schedule(step, steps, cfg.lambda_max, cfg.lambda_min) if algo == "mupo" else 0.0
        trajs = policy.sample(cfg.N, _rng(seed, step, _BATCH))
        batch, objective, diag = build_step_batch(algo, trajs, land, cfg, lam, step, seed)

        val = policy.sample(VALIDATION_SAMPLES, _rng(seed, step, _VALIDATION))
        val_div = pairwise_diversity(batch_embeddings(val, land))
        log.records.append({
            "step": step,
            "mean_r_acc": diag["mean_r_acc"],
            "mean_r_div": diag["mean_r_div"],
            "lambda": lam,
            "objective": objective,
            "validation_diversity": val_div,
            "expected_reward_exact": exact_expected_reward(policy, land) if exact else float("nan"),
            "policy_hash": policy.snapshot_hash(),
        })
        log.final_validation = val

        if step < steps:
            old = policy.logits.copy()
            grad = step_gradient(policy.logits, old, batch, cfg.clip_eps, temperature)
            policy.logits = policy.logits + learning_rate * grad
            if not np.all(np.abs(policy.logits) < LOGIT_BOUND):
                raise FloatingPointError(f"logits diverged at step {step}")
    log.final_logits = policy.logits.copy()
    return log
