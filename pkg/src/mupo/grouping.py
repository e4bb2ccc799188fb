"""Size-constrained clustering of rollout embeddings.

Rollouts are grouped by cosine distance to K centroids with every group
holding at least ``G_min`` members. The assignment step is an exact
minimum-cost flow, solved as a rectangular assignment problem: each group
contributes ``G_min`` mandatory slots, and ``N - K * G_min`` overflow slots
accept any row at that row's cheapest group cost.

Costs are compared on an integer grid (``COST_SCALE`` units per unit of
distance) so that ties are exact and the lexicographic tie-break on rollout
index is reproducible across solvers.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import GroupPartition, MupoConfig
from .embedding import check_embeddings, cosine_distance_matrix, normalize_rows

COST_SCALE = 10**9
MAX_ITER = 50
BRUTE_FORCE_LIMIT = 10**6


class InfeasiblePartitionError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterState:
    centroids: np.ndarray
    iteration: int = 0
    converged: bool = False

    @property
    def K(self):
        return self.centroids.shape[0]


@dataclass(frozen=True)
class Assignment:
    partition: GroupPartition
    cost: float
    int_cost: int


def quantized_costs(E, centroids):
    """Integer cost matrix (rows x groups) on the shared comparison grid."""
    D = cosine_distance_matrix(E, centroids)
    return np.rint(D * COST_SCALE).astype(np.int64)


def assignment_cost(E, centroids, labels):
    """Total cosine distance of each row to its assigned centroid, summed in row order."""
    D = cosine_distance_matrix(E, centroids)
    return float(sum(D[i, g] for i, g in enumerate(labels)))


def init_centroids(E, K, seed=0):
    """Deterministic farthest-point initialization.

    The first centroid is row 0; every further centroid is the row with the
    largest minimum distance to the centroids already chosen, lowest index
    on ties. ``seed`` is accepted for interface stability and unused.
    """
    E = check_embeddings(E)
    n = E.shape[0]
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise ValueError(f"K={K} exceeds the number of rows N={n}")
    chosen = [0]
    D = cosine_distance_matrix(E)
    min_dist = D[0].copy()
    min_dist[0] = -np.inf
    while len(chosen) < K:
        # argmax returns the first maximal index
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, D[nxt])
        min_dist[chosen] = -np.inf
    return ClusterState(centroids=E[chosen].copy())


def _check_feasible(n, K, g_min):
    if g_min < 0:
        raise ValueError("G_min must be >= 0")
    if K * g_min > n:
        raise InfeasiblePartitionError(
            f"cannot give {K} groups at least {g_min} members from {n} rows"
        )


def _slot_matrix(C, g_min, fixed):
    """Expand an (N, K) integer cost matrix into the square slot problem.

    ``fixed`` maps row -> group for rows whose group is pinned; those rows
    can only use their group's mandatory slots or overflow slots at that
    group's cost.
    """
    n, K = C.shape
    n_free = n - K * g_min
    big = int(C.max(initial=0)) * n + 1
    cols = []
    for k in range(K):
        cols.extend([C[:, k]] * g_min)
    if n_free:
        cols.extend([C.min(axis=1)] * n_free)
    S = np.column_stack(cols).astype(np.float64) if cols else np.zeros((n, 0))
    for i, g in fixed.items():
        row = np.full(S.shape[1], float(big))
        row[g * g_min:(g + 1) * g_min] = C[i, g]
        row[K * g_min:] = C[i, g]
        S[i] = row
    return S, big


def _solve(C, g_min, fixed):
    S, big = _slot_matrix(C, g_min, fixed)
    rows, cols = linear_sum_assignment(S)
    total = int(round(S[rows, cols].sum()))
    if total >= big:
        return None, None
    K = C.shape[1]
    labels = np.empty(C.shape[0], dtype=int)
    for i, c in zip(rows, cols):
        if i in fixed:
            labels[i] = fixed[i]
        elif c < K * g_min:
            labels[i] = c // g_min
        else:
            # first cheapest group, so the overflow choice is also lexicographic
            labels[i] = int(np.argmin(C[i]))
    return labels, total


def _min_size_labels(C, g_min):
    n, K = C.shape
    _check_feasible(n, K, g_min)
    labels, best = _solve(C, g_min, {})
    if labels is None:
        raise InfeasiblePartitionError("no feasible assignment")
    fixed = {}
    # Pin rows in index order to the smallest group that still admits an
    # optimum; the incumbent solution already satisfies earlier pins.
    for i in range(n):
        for g in range(int(labels[i])):
            trial = dict(fixed)
            trial[i] = g
            cand, total = _solve(C, g_min, trial)
            if cand is not None and total == best:
                labels = cand
                break
        fixed[i] = int(labels[i])
    return labels, best


def assign_min_size(E, centroids, g_min):
    """Minimum-cost assignment with every group holding at least ``g_min`` rows.

    Among cost-equal optima the assignment that is lexicographically smallest
    in rollout order is returned.
    """
    E = check_embeddings(E)
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    C = quantized_costs(E, centroids)
    labels, int_cost = _min_size_labels(C, g_min)
    partition = GroupPartition.from_labels(labels, K=centroids.shape[0])
    return Assignment(partition, assignment_cost(E, centroids, labels), int_cost)


def brute_force_assignment(E, centroids, g_min):
    """Exhaustive reference for :func:`assign_min_size` (K**N <= 1e6)."""
    E = check_embeddings(E)
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    n, K = E.shape[0], centroids.shape[0]
    if K**n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"instance too large for enumeration: {K}**{n}")
    _check_feasible(n, K, g_min)
    C = quantized_costs(E, centroids).tolist()
    best, best_labels = None, None
    # product() yields assignments in lexicographic order, so a strict
    # improvement test keeps the lexicographically first optimum
    for labels in itertools.product(range(K), repeat=n):
        counts = [0] * K
        for g in labels:
            counts[g] += 1
        if min(counts) < g_min:
            continue
        total = sum(C[i][g] for i, g in enumerate(labels))
        if best is None or total < best:
            best, best_labels = total, labels
    if best_labels is None:
        raise InfeasiblePartitionError("no feasible assignment")
    partition = GroupPartition.from_labels(best_labels, K=K)
    return Assignment(partition, assignment_cost(E, centroids, best_labels), best)


def update_centroids(E, labels, K):
    """Re-normalized member means; a zero mean falls back to the lowest-index member."""
    centroids = np.empty((K, E.shape[1]))
    for k in range(K):
        members = np.flatnonzero(labels == k)
        mean = E[members].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            centroids[k] = E[members[0]]
        else:
            centroids[k] = mean / norm
    return centroids


def _run_kmeans(E, K, g_min, max_iter=MAX_ITER):
    if g_min < 1:
        raise ValueError("G_min must be >= 1 for clustering (groups must stay non-empty)")
    state = init_centroids(E, K)
    centroids = state.centroids
    prev = None
    history = []
    it = 0
    converged = False
    while it < max_iter:
        result = assign_min_size(E, centroids, g_min)
        it += 1
        labels = result.partition.as_array()
        history.append(result.cost)
        if prev is not None and np.array_equal(labels, prev.partition.as_array()):
            converged = True
            break
        prev = result
        centroids = update_centroids(E, labels, K)
    return result, ClusterState(centroids, it, converged), history


def constrained_kmeans(E, cfg: MupoConfig):
    """Partition rows of ``E`` into ``cfg.K`` groups of at least ``cfg.G_min`` rows."""
    E = check_embeddings(E)
    K, g_min = cfg.K, cfg.G_min
    _check_feasible(E.shape[0], K, g_min)
    if K == 1:
        return GroupPartition.single(E.shape[0])
    result, _, _ = _run_kmeans(E, K, g_min)
    return result.partition


class ConstrainedKMeans(ClusterMixin, BaseEstimator):
    """K-means on the unit sphere with a minimum cluster size.

    Parameters
    ----------
    n_clusters : int
        Number of groups K.
    min_size : int
        Minimum number of members per group.
    max_iter : int
        Maximum number of assign/update rounds.
    random_state : int
        Unused; initialization is deterministic farthest-point.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
    inertia_ : float
        Total cosine distance of the final assignment.
    n_iter_ : int
    cost_history_ : list of float
        Assignment cost after each round; non-increasing.
    """

    def __init__(self, n_clusters=3, min_size=3, max_iter=MAX_ITER, random_state=None):
        self.n_clusters = n_clusters
        self.min_size = min_size
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        E = normalize_rows(check_array(X, dtype=float))
        _check_feasible(E.shape[0], self.n_clusters, self.min_size)
        result, state, history = _run_kmeans(E, self.n_clusters, self.min_size, self.max_iter)
        self.labels_ = result.partition.as_array()
        self.partition_ = result.partition
        self.cluster_centers_ = update_centroids(E, self.labels_, self.n_clusters)
        self.inertia_ = result.cost
        self.n_iter_ = state.iteration
        self.converged_ = state.converged
        self.cost_history_ = history
        self.n_features_in_ = E.shape[1]
        return self

    def predict(self, X):
        """Nearest centroid for new rows (no size constraint)."""
        check_is_fitted(self, "cluster_centers_")
        E = normalize_rows(check_array(X, dtype=float))
        return np.argmin(cosine_distance_matrix(E, self.cluster_centers_), axis=1)
