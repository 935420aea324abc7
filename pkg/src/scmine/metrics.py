"""Ranking metrics, the Wilcoxon signed-rank test and the mode-comparison protocol."""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .corpus import Corpus, OTHER, stratified_kfold_indices
from .extract import FeatureMode, render_all
from .features import TfidfVectorizer
from .linmodel import OneVsRestClassifier

__all__ = [
    "roc_auc",
    "average_precision",
    "rank_average",
    "WilcoxonResult",
    "wilcoxon",
    "EvalReport",
    "evaluate_scores",
    "vectorizer_for",
    "fit_mode_model",
    "cross_validate",
    "select_lambda",
    "ModeComparisonReport",
    "compare_modes",
    "hypothesis_table",
    "LAMBDA_GRID",
    "ALTERNATIVES",
]

ALTERNATIVES = ("two_sided", "less", "greater")
LAMBDA_GRID = (0.001, 0.01, 0.1, 1.0, 10.0)
EXACT_MAX_N = 25


def rank_average(values) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.shape[0])
    boundaries = np.flatnonzero(np.diff(sorted_vals)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [values.shape[0]]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def _binary(labels) -> np.ndarray:
    y = np.asarray(labels).astype(int).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return y


def roc_auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties 1/2).

    Computed from average ranks: ``(R_pos - P(P+1)/2) / (P N)``.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = _binary(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    r = rank_average(s)
    return float((r[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve.

    ``sum_n (R_n - R_{n-1}) P_n`` over the distinct score thresholds in
    descending order; tied scores enter at one threshold.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = _binary(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision undefined: no positive labels")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.concatenate((np.flatnonzero(np.diff(s)), [s.shape[0] - 1]))
    tp = np.cumsum(y)[last]
    predicted = last + 1
    precision = tp / predicted
    recall = tp / n_pos
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * precision))


# -- Wilcoxon ----------------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    n_effective: int
    W_plus: float
    p_value: float
    alternative: str
    method: str


def _exact_tail_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Number of sign patterns reaching each doubled positive-rank sum."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon(x, y=None, alternative: str = "two_sided", method: str = "auto") -> WilcoxonResult:
    """Wilcoxon signed-rank test on the paired differences ``x - y``.

    Zero differences are dropped; tied ``|d|`` share average ranks. With
    ``method="auto"`` the null distribution is exact (every sign pattern
    counted) up to 25 non-zero pairs, otherwise a normal approximation
    with tie-corrected variance and a 0.5 continuity correction is used.
    ``greater`` tests whether ``x`` tends to exceed ``y``.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    if method not in ("auto", "exact", "approx"):
        raise ValueError("method must be auto, exact or approx")
    x = np.asarray(x, dtype=float).ravel()
    d = x if y is None else x - np.asarray(y, dtype=float).ravel()
    if y is not None and x.shape != np.asarray(y).ravel().shape:
        raise ValueError("x and y must have the same length")
    if d.shape[0] < 1:
        raise ValueError("need at least one pair")
    d = d[d != 0]
    n = d.shape[0]
    if n == 0:
        raise ValueError("no non-zero pairs")
    ranks = rank_average(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    use_exact = method == "exact" or (method == "auto" and n <= EXACT_MAX_N)

    if use_exact:
        doubled = [int(round(2 * r)) for r in ranks]
        counts = _exact_tail_counts(doubled)
        total = 2 ** n
        obs = int(round(2 * w_plus))
        p_ge = float(sum(counts[obs:]) / total)
        p_le = float(sum(counts[:obs + 1]) / total)
        label = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
        sd = math.sqrt(var)
        p_ge = _normal_sf((w_plus - mean - 0.5) / sd)
        p_le = 1.0 - _normal_sf((w_plus - mean + 0.5) / sd)
        label = "normal_approx"

    if alternative == "greater":
        p = p_ge
    elif alternative == "less":
        p = p_le
    else:
        if use_exact:
            p = 2.0 * min(p_ge, p_le)
        else:
            p = 2.0 * _normal_sf((abs(w_plus - mean) - 0.5) / sd)
    p = min(1.0, max(p, np.nextafter(0.0, 1.0)))
    return WilcoxonResult(n_effective=n, W_plus=w_plus, p_value=float(p),
                          alternative=alternative, method=label)


# -- evaluation --------------------------------------------------------------

@dataclass
class EvalReport:
    mode: str
    model: str
    seed: int
    fold: str
    classes: List[str]
    auc: Dict[str, float]
    ap: Dict[str, float]
    positives: Dict[str, int]

    @property
    def macro_auc(self) -> float:
        vals = [v for v in self.auc.values() if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def macro_ap(self) -> float:
        vals = [v for v in self.ap.values() if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def rows(self):
        for c in self.classes:
            yield [self.mode, self.seed, self.fold, c, self.auc[c], self.ap[c]]


EVAL_HEADER = ("mode", "seed", "fold", "class", "auc", "ap")


def evaluate_scores(scores: np.ndarray, labels: Sequence, classes: Sequence[str], *,
                    mode: str = "", model: str = "", seed: int = 0, fold="") -> EvalReport:
    """Per-class AUC and AP of one-vs-rest scores; undefined values are NaN."""
    labels = np.asarray(labels, dtype=object)
    auc, ap, pos = {}, {}, {}
    for j, c in enumerate(classes):
        y = (labels == c).astype(int)
        pos[c] = int(y.sum())
        auc[c] = roc_auc(scores[:, j], y) if 0 < pos[c] < y.shape[0] else float("nan")
        ap[c] = average_precision(scores[:, j], y) if pos[c] > 0 else float("nan")
    return EvalReport(mode=mode, model=model, seed=seed, fold=str(fold), classes=list(classes),
                      auc=auc, ap=ap, positives=pos)


def vectorizer_for(mode, min_df_code: int = 2, min_df_text: int = 1) -> TfidfVectorizer:
    mode = FeatureMode.parse(mode)
    if mode.is_text:
        return TfidfVectorizer(analyzer="text", min_df=min_df_text)
    return TfidfVectorizer(analyzer="code", min_df=min_df_code)


def fit_mode_model(texts_train, labels_train, mode, penalty="l2", lam=None, *,
                   other_threshold=0.5, min_df_code=2, min_df_text=1, n_jobs=1, classes=None,
                   max_iter=1000, tol=1e-6):
    vec = vectorizer_for(mode, min_df_code, min_df_text)
    X = vec.fit_transform(texts_train)
    clf = OneVsRestClassifier(penalty=penalty, lam=lam, other_threshold=other_threshold,
                              n_jobs=n_jobs, classes=classes, max_iter=max_iter, tol=tol)
    clf.fit(X, list(labels_train))
    return vec, clf


def cross_validate(texts: Sequence[str], labels: Sequence[str], mode, *, folds: int = 3,
                   seed: int = 0, penalty="l2", lam=None, min_df_code=2, min_df_text=1,
                   classes=None, n_jobs=1, model_name="") -> List[EvalReport]:
    """One EvalReport per validation fold of a seeded stratified k-fold."""
    mode = FeatureMode.parse(mode)
    if classes is None:
        classes = sorted({c for c in labels if c != OTHER})
    reports = []
    for f, (tr, va) in enumerate(stratified_kfold_indices(labels, folds, seed)):
        vec, clf = fit_mode_model([texts[i] for i in tr], [labels[i] for i in tr], mode,
                                  penalty, lam, min_df_code=min_df_code,
                                  min_df_text=min_df_text, n_jobs=n_jobs, classes=classes)
        scores = clf.predict_proba(vec.transform([texts[i] for i in va]))
        reports.append(evaluate_scores(scores, [labels[i] for i in va], list(clf.classes_),
                                       mode=mode.value, model=model_name, seed=seed, fold=f))
    return reports


def select_lambda(texts, labels, mode, *, penalty="l2", grid=LAMBDA_GRID, folds=3, seed=0,
                  min_df_code=2, min_df_text=1, n_jobs=1) -> Tuple[float, Dict[float, float]]:
    """Grid value with the best mean macro-AUC over CV folds (first wins ties)."""
    results = {}
    for lam in grid:
        reports = cross_validate(texts, labels, mode, folds=folds, seed=seed, penalty=penalty,
                                 lam=lam, min_df_code=min_df_code, min_df_text=min_df_text,
                                 n_jobs=n_jobs)
        results[lam] = float(np.nanmean([r.macro_auc for r in reports]))
    best = max(grid, key=lambda lam: (results[lam], -grid.index(lam)))
    return best, results


# -- mode comparison ---------------------------------------------------------

@dataclass
class ModeComparisonReport:
    modes: List[str]
    seeds: List[int]
    folds: int
    cells: List[Tuple[int, int]]
    auc: Dict[str, List[float]]
    ap: Dict[str, List[float]]
    reports: List[EvalReport] = field(default_factory=list)
    tests: List[dict] = field(default_factory=list)

    def samples(self, metric: str) -> Dict[str, List[float]]:
        return {"auc": self.auc, "ap": self.ap}[metric]

    def test_rows(self):
        for t in self.tests:
            yield [t["mode_a"], t["mode_b"], t["metric"], t["alternative"], t["W"], t["p"], t["method"]]


WILCOXON_HEADER = ("mode_a", "mode_b", "metric", "alternative", "W", "p", "method")


def _pairwise_tests(modes: Sequence[str], samples: Dict[str, Dict[str, List[float]]]) -> List[dict]:
    rows = []
    for a, b in itertools.combinations(modes, 2):
        for metric in ("auc", "ap"):
            x, y = samples[metric][a], samples[metric][b]
            for alt in ALTERNATIVES:
                try:
                    res = wilcoxon(x, y, alternative=alt)
                    rows.append(dict(mode_a=a, mode_b=b, metric=metric, alternative=alt,
                                     W=res.W_plus, p=res.p_value, method=res.method))
                except ValueError as exc:
                    if "no non-zero pairs" not in str(exc):
                        raise
                    rows.append(dict(mode_a=a, mode_b=b, metric=metric, alternative=alt,
                                     W=0.0, p=1.0, method="equal"))
    return rows


def compare_modes(corpus: Corpus, modes: Sequence = ("fc", "oc", "ocom", "ef"), *,
                  seeds: Sequence[int] = tuple(range(14)), folds: int = 3, penalty="l2",
                  lam=None, min_df_code=2, min_df_text=1, n_jobs=1) -> ModeComparisonReport:
    """Paired per-(seed, fold) macro AUC/AP for each mode plus Wilcoxon tests.

    For every seed the corpus gets a fresh stratified k-fold; each fold is
    trained and scored once per mode, so samples stay aligned by
    ``(seed, fold)`` across modes. Every mode pair is tested on both metrics
    under all three alternatives.
    """
    modes = [FeatureMode.parse(m).value for m in modes]
    labels = corpus.labels
    if any(label is None for label in labels):
        raise ValueError("compare_modes needs a fully labeled corpus")
    classes = sorted({c for c in labels if c != OTHER})
    views = {m: render_all(corpus.sources, m) for m in modes}

    jobs = []
    for seed in seeds:
        for f, (tr, va) in enumerate(stratified_kfold_indices(labels, folds, seed)):
            for m in modes:
                jobs.append((seed, f, m, tr, va))

    def run(job):
        seed, f, m, tr, va = job
        texts = views[m]
        try:
            vec, clf = fit_mode_model([texts[i] for i in tr], [labels[i] for i in tr], m,
                                      penalty, lam, min_df_code=min_df_code,
                                      min_df_text=min_df_text, classes=classes)
            scores = clf.predict_proba(vec.transform([texts[i] for i in va]))
        except ValueError as exc:
            raise RuntimeError(f"mode {m}, seed {seed}, fold {f}: {exc}") from exc
        return evaluate_scores(scores, [labels[i] for i in va], classes,
                               mode=m, model=penalty, seed=seed, fold=f)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            reports = list(pool.map(run, jobs))
    else:
        reports = [run(j) for j in jobs]

    cells = []
    auc = {m: [] for m in modes}
    ap = {m: [] for m in modes}
    for job, rep in zip(jobs, reports):
        seed, f, m = job[:3]
        if m == modes[0]:
            cells.append((seed, f))
        auc[m].append(rep.macro_auc)
        ap[m].append(rep.macro_ap)
    report = ModeComparisonReport(modes=modes, seeds=list(seeds), folds=folds, cells=cells,
                                  auc=auc, ap=ap, reports=reports)
    report.tests = _pairwise_tests(modes, {"auc": auc, "ap": ap})
    return report


def hypothesis_table(report: ModeComparisonReport, alpha: float = 0.05) -> List[dict]:
    """Per mode pair and metric, the one-sided null hypothesis not rejected.

    ``greater`` tests H1 ``a > b`` whose null is ``a < b`` and vice versa;
    the null with the larger p-value is reported, flagged by whether it
    survives at ``alpha``.
    """
    by_key = {(t["mode_a"], t["mode_b"], t["metric"], t["alternative"]): t for t in report.tests}
    rows = []
    for a, b in itertools.combinations(report.modes, 2):
        for metric in ("auc", "ap"):
            greater = by_key[(a, b, metric, "greater")]
            less = by_key[(a, b, metric, "less")]
            if greater["method"] == "equal":
                rows.append(dict(mode_a=a, mode_b=b, metric=metric, h0=f"{a}={b}", p=1.0,
                                 rejected=False))
                continue
            if greater["p"] >= less["p"]:
                h0, p = f"{a}<{b}", greater["p"]
            else:
                h0, p = f"{a}>{b}", less["p"]
            rows.append(dict(mode_a=a, mode_b=b, metric=metric, h0=h0, p=p, rejected=p < alpha))
    return rows
