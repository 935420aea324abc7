"""k-means with k-means++ seeding, Davies-Bouldin score, elbow sweep, topics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .features import class_term_stats, ctfidf, top_terms

__all__ = [
    "ClusterResult",
    "ElbowCurve",
    "DegenerateClusteringError",
    "kmeans",
    "davies_bouldin",
    "elbow_sweep",
    "knee_point",
    "cluster_topics",
    "KMeans",
]

MAX_ITER = 300
SHIFT_TOL = 1e-8


class DegenerateClusteringError(ValueError):
    pass


@dataclass
class ClusterResult:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    db_score: Optional[float]
    n_init_used: int
    seed: int
    n_iter: int = 0
    inertia_trace: List[float] = field(default_factory=list)


@dataclass
class ElbowCurve:
    ks: List[int]
    scores: List[Optional[float]]
    suggested_k: int

    @property
    def best_k(self) -> int:
        """k with the lowest Davies-Bouldin score."""
        valid = [(s, k) for k, s in zip(self.ks, self.scores) if s is not None]
        return min(valid)[1]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    D = (np.einsum("ij,ij->i", X, X)[:, None] - 2.0 * X @ C.T
         + np.einsum("ij,ij->i", C, C)[None, :])
    return np.maximum(D, 0.0)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(X, X[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point already coincides with a center
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(remaining[rng.integers(remaining.shape[0])])
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(X, X[idx:idx + 1]).ravel())
    return X[chosen].copy()


def _repair_empty(X: np.ndarray, labels: np.ndarray, C: np.ndarray, k: int) -> np.ndarray:
    """Give each empty cluster the point farthest from its own centroid."""
    labels = labels.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        d = np.sum((X - C[labels]) ** 2, axis=1)
        counts = np.bincount(labels, minlength=k)
        d[counts[labels] <= 1] = -1.0
        i = int(np.argmax(d))
        labels[i] = c
        C[c] = X[i]
    return labels


def _centroids(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    C = np.zeros((k, X.shape[1]))
    np.add.at(C, labels, X)
    return C / np.bincount(labels, minlength=k)[:, None]


def _inertia(X, labels, C) -> float:
    return float(np.sum((X - C[labels]) ** 2))


def _lloyd(X: np.ndarray, C: np.ndarray, k: int):
    labels = None
    trace: List[float] = []
    n_iter = 0
    for n_iter in range(1, MAX_ITER + 1):
        new_labels = np.argmin(_sq_dists(X, C), axis=1)
        new_labels = _repair_empty(X, new_labels, C, k)
        trace.append(_inertia(X, new_labels, C))
        stable = labels is not None and np.array_equal(new_labels, labels)
        labels = new_labels
        C_new = _centroids(X, labels, k)
        shift = float(np.max(np.sqrt(np.sum((C_new - C) ** 2, axis=1))))
        C = C_new
        if stable or shift < SHIFT_TOL:
            break
    return labels, C, n_iter, trace


def kmeans(X, k: int, seed: int = 0, n_init: int = 10) -> ClusterResult:
    """Best-of-``n_init`` Lloyd runs from k-means++ starts.

    Each restart draws its own seed from a generator seeded with ``seed``;
    the run with the lowest inertia wins (earliest on ties).
    """
    X = check_array(X, dtype=float)
    n = X.shape[0]
    if k <= 0:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k = {k} exceeds the number of points ({n})")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    master = np.random.default_rng(seed)
    run_seeds = master.integers(0, 2**63 - 1, size=n_init)
    best = None
    for run_seed in run_seeds:
        rng = np.random.default_rng(int(run_seed))
        labels, C, n_iter, trace = _lloyd(X, _kmeans_pp(X, k, rng), k)
        inertia = _inertia(X, labels, C)
        if best is None or inertia < best[0]:
            best = (inertia, labels, C, n_iter, trace)
    inertia, labels, C, n_iter, trace = best
    db = None
    if k >= 2:
        try:
            db = davies_bouldin(X, labels, C)
        except DegenerateClusteringError:
            db = None
    return ClusterResult(k=k, assignments=labels, centroids=C, inertia=inertia, db_score=db,
                         n_init_used=n_init, seed=seed, n_iter=n_iter, inertia_trace=trace)


def davies_bouldin(X, assignments, centroids) -> float:
    """Mean over clusters of ``max_j (S_i + S_j) / M_ij``.

    ``S_i`` is the mean Euclidean distance of cluster ``i``'s points to its
    centroid and ``M_ij`` the distance between centroids.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(assignments)
    C = np.asarray(centroids, dtype=float)
    present = np.unique(labels)
    if present.shape[0] < 2:
        raise DegenerateClusteringError("Davies-Bouldin needs at least two non-empty clusters")
    C = C[present]
    S = np.array([np.mean(np.linalg.norm(X[labels == c] - C[i], axis=1))
                  for i, c in enumerate(present)])
    M = np.sqrt(_sq_dists(C, C))
    np.fill_diagonal(M, np.inf)
    if np.any(M == 0):
        raise DegenerateClusteringError("degenerate clustering: coincident centroids")
    R = (S[:, None] + S[None, :]) / M
    return float(np.mean(R.max(axis=1)))


def knee_point(ks: Sequence[int], scores: Sequence[float], rtol: float = 1e-9) -> int:
    """k farthest from the chord between the first and last point.

    Near-ties (within ``rtol`` of the maximum distance, relative to the
    score range) resolve to the smaller k.
    """
    x = np.asarray(ks, dtype=float)
    y = np.asarray(scores, dtype=float)
    if x.shape[0] <= 2:
        return int(x[0])
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    dist = np.abs(dy * (x - x[0]) - dx * (y - y[0])) / math.hypot(dx, dy)
    scale = max(float(np.ptp(y)), float(np.ptp(x)), 1e-300)
    best = dist.max()
    candidates = np.flatnonzero(dist >= best - rtol * scale)
    return int(x[candidates[0]])


def elbow_sweep(X, k_min: int, k_max: int, seed: int = 0, n_init: int = 10) -> ElbowCurve:
    """Davies-Bouldin score for every k in ``[k_min, k_max]`` plus a knee.

    Every k is clustered with the same seed, so each point on the curve is
    independent of the others. A k whose clustering is degenerate keeps a
    missing score and is left out of the knee computation.
    """
    X = check_array(X, dtype=float)
    if not 2 <= k_min < k_max <= X.shape[0]:
        raise ValueError(f"need 2 <= k_min < k_max <= n; got {k_min}, {k_max}, n={X.shape[0]}")
    ks = list(range(k_min, k_max + 1))
    scores = [kmeans(X, k, seed=seed, n_init=n_init).db_score for k in ks]
    valid = [(k, s) for k, s in zip(ks, scores) if s is not None]
    if not valid:
        raise DegenerateClusteringError("no k in the sweep produced a valid clustering")
    suggested = knee_point([k for k, _ in valid], [s for _, s in valid])
    return ElbowCurve(ks=ks, scores=scores, suggested_k=suggested)


def cluster_topics(assignments: Sequence[Hashable], token_lists: Sequence[Sequence[str]],
                   n_top: int = 10, m: Optional[int] = None) -> Dict[Hashable, List[Tuple[str, float]]]:
    """Top c-TF-IDF terms per cluster, treating clusters as classes."""
    clusters = sorted(set(assignments))
    stats = class_term_stats(token_lists, list(assignments), class_names=clusters, m=m)
    table = ctfidf(stats)
    return {c: top_terms(table, c, n_top) for c in clusters}


class KMeans(ClusterMixin, BaseEstimator):
    def __init__(self, n_clusters=8, n_init=10, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        self.result_ = kmeans(X, self.n_clusters, seed=self.random_state, n_init=self.n_init)
        self.labels_ = self.result_.assignments
        self.cluster_centers_ = self.result_.centroids
        self.inertia_ = self.result_.inertia
        self.n_iter_ = self.result_.n_iter
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=float)
        return np.argmin(_sq_dists(X, self.cluster_centers_), axis=1)

    def score(self, X, y=None):
        X = check_array(X, dtype=float)
        labels = self.predict(X)
        return -_inertia(X, labels, self.cluster_centers_)
