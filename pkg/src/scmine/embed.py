"""Dimensionality reduction: randomized truncated SVD and exact t-SNE."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "SvdResult",
    "truncated_svd",
    "TruncatedSVD",
    "TsneConfig",
    "TsneResult",
    "squared_distances",
    "calibrate_affinities",
    "symmetrize",
    "joint_probabilities",
    "low_dim_affinities",
    "kl_divergence",
    "tsne_gradient",
    "tsne",
    "TSNE",
]


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def projection(self) -> np.ndarray:
        return self.U * self.S


def _orthonormal(A: np.ndarray) -> np.ndarray:
    Q, _ = np.linalg.qr(A, mode="reduced")
    return Q


def truncated_svd(X, rank: int, seed: int = 0, oversample: int = 10, n_iter: int = 4) -> SvdResult:
    """Top-``rank`` SVD by randomized subspace iteration.

    A seeded Gaussian test matrix with ``rank + oversample`` columns is
    pushed through ``n_iter`` power iterations, re-orthonormalizing after
    every multiplication; the small projected matrix is then decomposed
    exactly. Signs are fixed so the largest-magnitude entry of every right
    singular vector is positive.
    """
    if not sp.issparse(X):
        X = check_array(X, dtype=float)
    else:
        X = sp.csr_matrix(X, dtype=float)
    n, d = X.shape
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if rank > min(n, d):
        warnings.warn(f"rank {rank} exceeds min(n, d) = {min(n, d)}; returning {min(n, d)} components",
                      stacklevel=2)
        rank = min(n, d)
    width = min(rank + oversample, min(n, d))
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((d, width))
    Q = _orthonormal(np.asarray(X @ omega))
    for _ in range(n_iter):
        Z = _orthonormal(np.asarray(X.T @ Q))
        Q = _orthonormal(np.asarray(X @ Z))
    B = np.asarray((X.T @ Q).T)
    Ub, S, Vt = np.linalg.svd(B, full_matrices=False)
    U = Q @ Ub[:, :rank]
    S = S[:rank]
    V = Vt[:rank].T
    signs = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return SvdResult(U=U * signs, S=S, V=V * signs)


class TruncatedSVD(TransformerMixin, BaseEstimator):
    """Latent-semantic projection ``X -> X V`` onto the top singular directions."""

    def __init__(self, n_components=5, random_state=0, oversample=10, n_iter=4):
        self.n_components = n_components
        self.random_state = random_state
        self.oversample = oversample
        self.n_iter = n_iter

    def _fit(self, X):
        result = truncated_svd(X, self.n_components, seed=self.random_state,
                               oversample=self.oversample, n_iter=self.n_iter)
        self.components_ = result.V.T
        self.singular_values_ = result.S
        return result

    def fit(self, X, y=None):
        self._fit(X)
        return self

    def fit_transform(self, X, y=None):
        return self._fit(X).projection

    def transform(self, X):
        check_is_fitted(self, "components_")
        return np.asarray(X @ self.components_.T)


# -- t-SNE -------------------------------------------------------------------

def _default_momentum(t: int) -> float:
    return 0.5 if t < 250 else 0.8


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    n_iter: int = 1000
    learning_rate: float = 200.0
    momentum: Callable[[int], float] = _default_momentum
    seed: int = 0
    early_exaggeration: float = 1.0
    exaggeration_iters: int = 250
    max_input_dim: int = 50
    output_dim: int = 2

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.output_dim != 2:
            raise ValueError("t-SNE output is two-dimensional")


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl_trace: List[float] = field(default_factory=list)
    P: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None


def squared_distances(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _row_entropy(d: np.ndarray, beta: float) -> Tuple[float, np.ndarray]:
    """Entropy (nats) and conditional probabilities at precision ``beta``."""
    w = np.exp(-(d - d.min()) * beta)
    s = w.sum()
    p = w / s
    nz = p > 0
    H = float(-(p[nz] * np.log(p[nz])).sum())
    return H, p


def calibrate_affinities(D: np.ndarray, perplexity: float, tol: float = 1e-5,
                         max_iter: int = 50) -> Tuple[np.ndarray, np.ndarray]:
    """Row-stochastic ``p_{j|i}`` with per-row perplexity ``2**H = perplexity``.

    ``D`` holds squared distances. Each row's precision
    ``beta_i = 1 / (2 sigma_i^2)`` is found by bisection (doubling/halving
    until bracketed) until the entropy is within ``tol`` nats of
    ``ln(perplexity)`` or ``max_iter`` steps are spent. Rows of identical
    points stay uniform whatever ``beta`` becomes.
    """
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    if D.shape != (n, n) or n < 2:
        raise ValueError("need a square distance matrix with n >= 2")
    if not 1.0 <= perplexity <= n - 1:
        raise ValueError(f"perplexity must lie in [1, {n - 1}], got {perplexity}")
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        d = np.delete(D[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        H, p = _row_entropy(d, beta)
        for _ in range(max_iter):
            diff = H - target
            if abs(diff) <= tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if np.isinf(hi) else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else (beta + lo) / 2.0
            H, p = _row_entropy(d, beta)
        P[i, np.arange(n) != i] = p
        betas[i] = beta
    sigma = np.sqrt(1.0 / (2.0 * betas))
    return P, sigma


def symmetrize(P_cond: np.ndarray) -> np.ndarray:
    """``p_ij = (p_{j|i} + p_{i|j}) / 2n``."""
    P_cond = np.asarray(P_cond, dtype=float)
    n = P_cond.shape[0]
    P = (P_cond + P_cond.T) / (2.0 * n)
    np.fill_diagonal(P, 0.0)
    return P


def joint_probabilities(X, perplexity: float, precomputed: bool = False):
    D = np.asarray(X, dtype=float) if precomputed else squared_distances(X)
    P_cond, sigma = calibrate_affinities(D, perplexity)
    return symmetrize(P_cond), sigma


def _student_kernel(Y: np.ndarray) -> np.ndarray:
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num


def low_dim_affinities(Y: np.ndarray) -> np.ndarray:
    num = _student_kernel(Y)
    return num / num.sum()


def kl_divergence(P: np.ndarray, Y: np.ndarray) -> float:
    Q = low_dim_affinities(Y)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne_gradient(P: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``dC/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j)(1 + ||y_i - y_j||^2)^-1``."""
    num = _student_kernel(Y)
    Q = num / num.sum()
    W = (P - Q) * num
    return 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)


def _reduce_input(X, max_dim: int, seed: int) -> np.ndarray:
    if X.shape[1] > max_dim and X.shape[0] > max_dim:
        return truncated_svd(X, max_dim, seed=seed).projection
    return X.toarray() if sp.issparse(X) else np.asarray(X, dtype=float)


def tsne(X, config: Optional[TsneConfig] = None, precomputed: bool = False) -> TsneResult:
    """Exact t-SNE by momentum gradient descent.

    ``Y0 ~ N(0, 1e-4 I)`` from the seeded generator, then
    ``Y_t = Y_{t-1} - lr * grad + alpha(t) * (Y_{t-1} - Y_{t-2})``.
    Inputs wider than ``max_input_dim`` columns are first reduced by
    truncated SVD. ``kl_trace`` starts with the KL of the initial layout.
    """
    config = config or TsneConfig()
    if precomputed:
        D = np.asarray(X, dtype=float)
        n = D.shape[0]
    else:
        if not sp.issparse(X):
            X = check_array(X, dtype=float)
        n = X.shape[0]
    if n < 2:
        raise ValueError("t-SNE needs at least two points")
    if not 1.0 <= config.perplexity <= n - 1:
        raise ValueError(f"perplexity must lie in [1, {n - 1}], got {config.perplexity}")
    if not precomputed:
        D = squared_distances(_reduce_input(X, config.max_input_dim, config.seed))
    P_cond, sigma = calibrate_affinities(D, config.perplexity)
    P = symmetrize(P_cond)

    rng = np.random.default_rng(config.seed)
    Y = rng.normal(0.0, 1e-2, size=(n, config.output_dim))
    Y_prev = Y.copy()
    trace = [kl_divergence(P, Y)]
    for t in range(1, config.n_iter + 1):
        exaggerate = config.early_exaggeration != 1.0 and t <= config.exaggeration_iters
        grad = tsne_gradient(P * config.early_exaggeration if exaggerate else P, Y)
        Y_next = Y - config.learning_rate * grad + config.momentum(t) * (Y - Y_prev)
        Y_prev, Y = Y, Y_next
        trace.append(kl_divergence(P, Y))
    return TsneResult(embedding=Y, kl_trace=trace, P=P, sigma=sigma)


class TSNE(TransformerMixin, BaseEstimator):
    """2-D t-SNE embedding; only ``fit_transform`` is meaningful."""

    def __init__(self, perplexity=30.0, n_iter=1000, learning_rate=200.0, random_state=0,
                 early_exaggeration=1.0, metric="euclidean"):
        self.perplexity = perplexity
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.early_exaggeration = early_exaggeration
        self.metric = metric

    def fit_transform(self, X, y=None):
        config = TsneConfig(perplexity=self.perplexity, n_iter=self.n_iter,
                            learning_rate=self.learning_rate, seed=self.random_state,
                            early_exaggeration=self.early_exaggeration)
        result = tsne(X, config, precomputed=self.metric == "precomputed")
        self.embedding_ = result.embedding
        self.kl_trace_ = result.kl_trace
        self.kl_divergence_ = result.kl_trace[-1]
        return self.embedding_

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self
