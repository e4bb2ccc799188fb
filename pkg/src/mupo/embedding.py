"""Embedding geometry: normalization, cosine distance, pairwise diversity."""

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.utils.validation import check_array

NORM_TOL = 1e-9


class DegenerateEmbeddingError(ValueError):
    pass


def normalize(v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("expected a 1-d vector")
    if not np.all(np.isfinite(v)):
        raise DegenerateEmbeddingError("non-finite embedding")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise DegenerateEmbeddingError("degenerate embedding")
    return v / norm


def normalize_rows(X):
    X = check_array(X, dtype=float)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateEmbeddingError(f"degenerate embedding in row {bad}")
    return X / norms[:, None]


def check_embeddings(E, min_rows=1):
    """Validate an embedding matrix: 2-d, finite, unit-norm rows."""
    E = check_array(E, dtype=float, ensure_min_samples=min_rows)
    norms = np.linalg.norm(E, axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        bad = int(np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)[0])
        raise ValueError(f"row {bad} is not unit norm (norm={norms[bad]:.12g})")
    return E


# For unit vectors 1 - u.v == |u - v|^2 / 2; the difference form is exactly 0
# for identical rows, which the dot-product form is not.


def cosine_distance(u, v):
    """Cosine distance ``1 - u.v`` of two unit vectors, clamped to [0, 2]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    diff = u - v
    return float(np.clip(0.5 * np.dot(diff, diff), 0.0, 2.0))


def cosine_distance_matrix(A, B=None):
    """All-pairs cosine distances between rows of A and rows of B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return np.clip(0.5 * cdist(A, B, "sqeuclidean"), 0.0, 2.0)


def pairwise_diversity(E):
    """Mean cosine distance over all unordered pairs of rows."""
    E = np.asarray(E, dtype=float)
    if E.ndim != 2 or E.shape[0] < 2:
        raise ValueError("diversity undefined for a single response")
    n = E.shape[0]
    D = cosine_distance_matrix(E)
    iu = np.triu_indices(n, k=1)
    return float(D[iu].mean())
