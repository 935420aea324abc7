"""Regularized linear classifiers and the one-vs-rest wrapper.

Three penalties are supported, all with an unpenalized intercept:

``l2``     logistic loss + (lam / 2) * ||w||^2         ("ridge")
``l1``     logistic loss + lam * ||w||_1               ("lasso")
``hinge``  hinge loss    + (lam / 2) * ||w||^2         (linear SVM)

Training is full-batch and deterministic: gradient descent with
backtracking for ``l2``, proximal gradient (soft thresholding) with
backtracking for ``l1``, and backtracked subgradient descent that only
accepts strict decreases for ``hinge``.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "PENALTIES",
    "MODEL_ALIASES",
    "TrainConfig",
    "LinearModel",
    "loss_and_grad",
    "train",
    "decision_function",
    "predict_proba",
    "LinearClassifier",
    "OneVsRestClassifier",
]

logger = logging.getLogger(__name__)

PENALTIES = ("l2", "l1", "hinge")
MODEL_ALIASES = {"ridge": "l2", "lasso": "l1", "svm": "hinge"}
DEFAULT_LAMBDA = {"l2": 1.0, "l1": 0.01, "hinge": 1.0}


def _penalty(name: str) -> str:
    name = MODEL_ALIASES.get(name, name)
    if name not in PENALTIES:
        raise ValueError(f"unknown penalty {name!r}; expected one of {PENALTIES} or {tuple(MODEL_ALIASES)}")
    return name


@dataclass(frozen=True)
class TrainConfig:
    max_iter: int = 1000
    tol: float = 1e-6
    step_init: float = 1.0
    step_shrink: float = 0.5
    step_grow: float = 2.0
    armijo: float = 0.5
    min_step: float = 1e-14
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float
    penalty: str
    lam: float
    n_iter: int = 0
    objective: float = float("nan")
    trace: List[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def to_json(self) -> dict:
        nz = np.flatnonzero(self.weights)
        return {
            "penalty": self.penalty,
            "lambda": float(self.lam),
            "intercept": float(self.intercept),
            "n_features": int(self.n_features),
            "weights": [[int(j), float(self.weights[j])] for j in nz],
        }

    @classmethod
    def from_json(cls, data: dict) -> "LinearModel":
        w = np.zeros(int(data["n_features"]))
        for j, v in data["weights"]:
            w[int(j)] = float(v)
        return cls(weights=w, intercept=float(data["intercept"]),
                   penalty=data["penalty"], lam=float(data["lambda"]))


def _as_matrix(X):
    if sp.issparse(X):
        return sp.csr_matrix(X, dtype=float)
    return check_array(X, dtype=float)


def _as_signs(y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1/-1")
    return y


def _data_loss(margins: np.ndarray, y: np.ndarray, penalty: str) -> Tuple[float, np.ndarray]:
    """Mean loss and its derivative with respect to each margin."""
    z = y * margins
    n = z.shape[0]
    if penalty == "hinge":
        active = z < 1.0
        loss = np.maximum(0.0, 1.0 - z).sum() / n
        dm = np.where(active, -y, 0.0) / n
        return loss, dm
    # ln(1 + exp(-z)), stable on both tails
    loss = (np.logaddexp(0.0, -z)).sum() / n
    dm = -y * expit(-z) / n
    return loss, dm


def _regularizer(w: np.ndarray, penalty: str, lam: float) -> float:
    if penalty == "l1":
        return lam * np.abs(w).sum()
    return 0.5 * lam * float(w @ w)


def loss_and_grad(w, b, X, y, penalty="l2", lam=1.0):
    """Objective and (sub)gradient ``(obj, grad_w, grad_b)``.

    For ``l1`` the reported gradient uses ``lam * sign(w)`` as the penalty
    subgradient (zero at ``w_j = 0``); training handles the penalty with a
    proximal step instead.
    """
    penalty = _penalty(penalty)
    X = _as_matrix(X)
    y = _as_signs(y)
    w = np.asarray(w, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
    if X.shape[1] != w.shape[0]:
        raise ValueError(f"X has {X.shape[1]} columns but w has {w.shape[0]} entries")
    return _objective(w, b, X, y, penalty, lam)


def _objective(w, b, X, y, penalty, lam):
    margins = np.asarray(X @ w).ravel() + b
    loss, dm = _data_loss(margins, y, penalty)
    grad_w = np.asarray(X.T @ dm).ravel()
    grad_b = float(dm.sum())
    if penalty == "l1":
        grad_w = grad_w + lam * np.sign(w)
    else:
        grad_w = grad_w + lam * w
    return loss + _regularizer(w, penalty, lam), grad_w, grad_b


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def train(X, y, penalty="l2", lam: Optional[float] = None,
          config: Optional[TrainConfig] = None) -> LinearModel:
    """Fit one binary linear model on labels in {-1, +1}."""
    penalty = _penalty(penalty)
    lam = DEFAULT_LAMBDA[penalty] if lam is None else float(lam)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    config = config or TrainConfig()
    X = _as_matrix(X)
    y = _as_signs(y)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("training needs at least one positive and one negative example")

    d = X.shape[1]
    w = np.zeros(d)
    b = 0.0
    smooth_lam = 0.0 if penalty == "l1" else lam
    smooth_penalty = "l2" if penalty == "l1" else penalty

    def smooth(w_, b_):
        # loss + ridge part only; the l1 term is added separately
        return _objective(w_, b_, X, y, smooth_penalty, smooth_lam)

    def full_objective(f_smooth, w_):
        return f_smooth + (lam * np.abs(w_).sum() if penalty == "l1" else 0.0)

    f, gw, gb = smooth(w, b)
    obj = full_objective(f, w)
    trace = [obj]
    step = config.step_init
    n_iter = 0
    for n_iter in range(1, config.max_iter + 1):
        if penalty != "l1":
            gnorm = max(np.max(np.abs(gw), initial=0.0), abs(gb))
            if gnorm <= config.tol:
                n_iter -= 1
                break
        accepted = False
        while step >= config.min_step:
            if penalty == "l1":
                w_new = _soft_threshold(w - step * gw, step * lam)
                b_new = b - step * gb
                dw, db = w_new - w, b_new - b
                f_new, gw_new, gb_new = smooth(w_new, b_new)
                bound = f + gw @ dw + gb * db + (dw @ dw + db * db) / (2 * step)
                ok = f_new <= bound + 1e-15 * abs(f)
                obj_new = full_objective(f_new, w_new)
                ok = ok and obj_new <= obj
            else:
                w_new = w - step * gw
                b_new = b - step * gb
                f_new, gw_new, gb_new = smooth(w_new, b_new)
                sq = gw @ gw + gb * gb
                obj_new = f_new
                if penalty == "hinge":
                    ok = obj_new < obj
                else:
                    ok = obj_new <= obj - config.armijo * step * sq
            if ok:
                accepted = True
                break
            step *= config.step_shrink
        if not accepted:
            logger.debug("line search stalled at iteration %d", n_iter)
            n_iter -= 1
            break
        if penalty == "l1":
            mapping = max(np.max(np.abs(w_new - w), initial=0.0), abs(b_new - b)) / step
        w, b, f, gw, gb, obj = w_new, b_new, f_new, gw_new, gb_new, obj_new
        trace.append(obj)
        step = step * config.step_grow
        if penalty == "l1" and mapping <= config.tol:
            break

    return LinearModel(weights=w, intercept=float(b), penalty=penalty, lam=lam,
                       n_iter=n_iter, objective=float(obj), trace=trace)


def decision_function(model: LinearModel, X) -> np.ndarray:
    X = _as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValueError(f"X has {X.shape[1]} columns, model expects {model.n_features}")
    return np.asarray(X @ model.weights).ravel() + model.intercept


def predict_proba(model: LinearModel, X) -> np.ndarray:
    """Sigmoid of the margin.

    For hinge models this is a monotone score in (0, 1), not a calibrated
    probability.
    """
    return expit(decision_function(model, X))


class LinearClassifier(ClassifierMixin, BaseEstimator):
    """Binary linear classifier; ``penalty`` is l2/l1/hinge or ridge/lasso/svm."""

    def __init__(self, penalty="l2", lam=None, max_iter=1000, tol=1e-6):
        self.penalty = penalty
        self.lam = lam
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        y = np.asarray(y)
        classes = np.unique(y)
        if classes.shape[0] != 2:
            raise ValueError(f"expected 2 classes, got {classes.shape[0]}")
        self.classes_ = classes
        signs = np.where(y == classes[1], 1.0, -1.0)
        self.model_ = train(X, signs, self.penalty, self.lam,
                            TrainConfig(max_iter=self.max_iter, tol=self.tol))
        self.coef_ = self.model_.weights[None, :]
        self.intercept_ = np.array([self.model_.intercept])
        self.n_features_in_ = self.model_.n_features
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return decision_function(self.model_, X)

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


class OneVsRestClassifier(ClassifierMixin, BaseEstimator):
    """One binary model per kept class; low maximum score routes to ``other``.

    Documents labelled ``other_label`` only ever serve as negatives.
    ``predict`` returns the argmax class (ties go to the earlier class)
    when its score reaches ``other_threshold``, otherwise ``other_label``.
    """

    def __init__(self, penalty="l2", lam=None, other_threshold=0.5, other_label="other",
                 max_iter=1000, tol=1e-6, n_jobs=1, classes=None):
        self.penalty = penalty
        self.lam = lam
        self.other_threshold = other_threshold
        self.other_label = other_label
        self.max_iter = max_iter
        self.tol = tol
        self.n_jobs = n_jobs
        self.classes = classes

    def fit(self, X, y):
        y = np.asarray(y, dtype=object)
        X = _as_matrix(X)
        if self.classes is None:
            classes = sorted({c for c in y if c != self.other_label})
        else:
            classes = [c for c in self.classes if c != self.other_label]
        if len(classes) < 1 or len(set(y)) < 2:
            raise ValueError("one-vs-rest needs at least two distinct labels")
        config = TrainConfig(max_iter=self.max_iter, tol=self.tol)

        def fit_one(c):
            signs = np.where(y == c, 1.0, -1.0)
            if not np.any(signs > 0):
                raise ValueError(f"class {c!r} has no positive examples")
            return train(X, signs, self.penalty, self.lam, config)

        if self.n_jobs and self.n_jobs > 1 and len(classes) > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                models = list(pool.map(fit_one, classes))
        else:
            models = [fit_one(c) for c in classes]
        self.classes_ = np.asarray(classes, dtype=object)
        self.models_ = models
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "models_")
        return np.column_stack([decision_function(m, X) for m in self.models_])

    def predict_proba(self, X):
        """Per-class scores, one column per entry of ``classes_``."""
        return expit(self.decision_function(X))

    def predict(self, X):
        return self.assign(self.predict_proba(X))

    def assign(self, scores) -> np.ndarray:
        scores = np.asarray(scores, dtype=float)
        best = np.argmax(scores, axis=1)
        top = scores[np.arange(scores.shape[0]), best]
        labels = self.classes_[best].astype(object)
        labels[top < self.other_threshold] = self.other_label
        return labels

    def to_json(self, vocabulary_fingerprint: str = "") -> dict:
        check_is_fitted(self, "models_")
        return {
            "penalty": self.models_[0].penalty,
            "lambda": float(self.models_[0].lam),
            "class_names": [str(c) for c in self.classes_],
            "other_threshold": float(self.other_threshold),
            "other_label": self.other_label,
            "vocabulary_fingerprint": vocabulary_fingerprint,
            "models": [dict(m.to_json(), **{"class": str(c)})
                       for c, m in zip(self.classes_, self.models_)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "OneVsRestClassifier":
        est = cls(penalty=data["penalty"], lam=data["lambda"],
                  other_threshold=data["other_threshold"],
                  other_label=data.get("other_label", "other"))
        est.models_ = [LinearModel.from_json(m) for m in data["models"]]
        est.classes_ = np.asarray(data["class_names"], dtype=object)
        est.n_features_in_ = est.models_[0].n_features
        return est

    def dumps(self, vocabulary_fingerprint: str = "") -> str:
        return json.dumps(self.to_json(vocabulary_fingerprint), indent=1, sort_keys=True) + "\n"
