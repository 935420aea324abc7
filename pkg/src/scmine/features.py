"""Tokenizers, vocabulary, TF-IDF vectors and class-based TF-IDF keywords."""
from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

__all__ = [
    "tokenize_code",
    "tokenize_text",
    "Vocabulary",
    "fit_vocabulary",
    "tfidf",
    "TfidfVectorizer",
    "ClassTermStats",
    "class_term_stats",
    "ClassTfidf",
    "ctfidf",
    "top_terms",
    "coo_csv",
]

PUNCTUATION = "(){}[];,.=+-*/<>!&|^%~?:"

_CODE_TOKEN = re.compile(
    r"[A-Za-z_$][A-Za-z0-9_$]*"
    r"|[0-9][0-9a-fA-Fx.]*"
    r"|[" + re.escape(PUNCTUATION) + r"]"
)
_WORD = re.compile(r"[^\W_]+")


def tokenize_code(text: str) -> List[str]:
    """Identifiers, numbers and single-character punctuation, case kept.

    >>> tokenize_code("a>=b")
    ['a', '>', '=', 'b']
    """
    return _CODE_TOKEN.findall(text)


def tokenize_text(text: str) -> List[str]:
    """Lowercased alphanumeric runs of length >= 2."""
    return [w for w in _WORD.findall(text.lower()) if len(w) >= 2]


ANALYZERS = {"code": tokenize_code, "text": tokenize_text}


@dataclass(frozen=True)
class Vocabulary:
    terms: Tuple[str, ...]
    doc_freq: Tuple[int, ...]
    n_docs: int

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "doc_freq", tuple(int(d) for d in self.doc_freq))
        if len(self.terms) != len(self.doc_freq):
            raise ValueError("terms and doc_freq differ in length")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.terms)})
        if len(self._index) != len(self.terms):
            raise ValueError("duplicate terms in vocabulary")

    @property
    def index(self) -> Dict[str, int]:
        return self._index

    def __len__(self):
        return len(self.terms)

    @property
    def idf(self) -> np.ndarray:
        df = np.asarray(self.doc_freq, dtype=float)
        return np.log((1.0 + self.n_docs) / (1.0 + df)) + 1.0

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.terms).encode("utf-8")).hexdigest()

    def to_json(self) -> dict:
        return {"terms": list(self.terms), "doc_freq": list(self.doc_freq), "n_docs": self.n_docs}

    @classmethod
    def from_json(cls, data: dict) -> "Vocabulary":
        return cls(terms=data["terms"], doc_freq=data["doc_freq"], n_docs=int(data["n_docs"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)


def fit_vocabulary(token_lists: Sequence[Sequence[str]], min_df: int = 1) -> Vocabulary:
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    if len(token_lists) == 0:
        raise ValueError("cannot fit a vocabulary on an empty corpus")
    df = Counter()
    for tokens in token_lists:
        df.update(set(tokens))
    terms = sorted(t for t, c in df.items() if c >= min_df)
    return Vocabulary(terms=terms, doc_freq=[df[t] for t in terms], n_docs=len(token_lists))


def _count_matrix(token_lists: Sequence[Sequence[str]], vocab: Vocabulary) -> sp.csr_matrix:
    index = vocab.index
    indptr = [0]
    indices: List[int] = []
    data: List[float] = []
    for tokens in token_lists:
        counts = Counter(index[t] for t in tokens if t in index)
        cols = sorted(counts)
        indices.extend(cols)
        data.extend(counts[c] for c in cols)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(token_lists), len(vocab)),
    )


def _l2_normalize_rows(X: sp.csr_matrix) -> sp.csr_matrix:
    X = X.tocsr(copy=True)
    sq = np.asarray(X.multiply(X).sum(axis=1)).ravel()
    norms = np.sqrt(sq)
    norms[norms == 0] = 1.0
    X.data /= np.repeat(norms, np.diff(X.indptr))
    return X


def tfidf(token_lists: Sequence[Sequence[str]], vocab: Vocabulary) -> sp.csr_matrix:
    """Raw counts times smoothed idf, each row L2-normalized.

    ``idf(t) = ln((1 + n_docs) / (1 + doc_freq[t])) + 1``. Tokens outside
    the vocabulary are ignored, so rows of unseen documents may be zero.
    """
    X = _count_matrix(token_lists, vocab)
    X = X @ sp.diags(vocab.idf, format="csr") if len(vocab) else X
    X = sp.csr_matrix(X)
    X.eliminate_zeros()
    X.sort_indices()
    return _l2_normalize_rows(X)


class TfidfVectorizer(TransformerMixin, BaseEstimator):
    """Fit a vocabulary on raw texts and map texts to TF-IDF rows.

    Parameters
    ----------
    analyzer : {"code", "text"} or callable
        ``"code"`` keeps identifiers and punctuation, ``"text"`` is for
        comments.
    min_df : int
        Minimum number of training documents a term must occur in.
    """

    def __init__(self, analyzer="code", min_df=1):
        self.analyzer = analyzer
        self.min_df = min_df

    def _tokenizer(self):
        if callable(self.analyzer):
            return self.analyzer
        try:
            return ANALYZERS[self.analyzer]
        except KeyError:
            raise ValueError(f"unknown analyzer {self.analyzer!r}") from None

    def fit(self, X, y=None):
        tok = self._tokenizer()
        self.vocabulary_ = fit_vocabulary([tok(doc) for doc in X], self.min_df)
        return self

    def transform(self, X):
        check_is_fitted(self, "vocabulary_")
        tok = self._tokenizer()
        return tfidf([tok(doc) for doc in X], self.vocabulary_)

    def fit_transform(self, X, y=None):
        tok = self._tokenizer()
        tokens = [tok(doc) for doc in X]
        self.vocabulary_ = fit_vocabulary(tokens, self.min_df)
        return tfidf(tokens, self.vocabulary_)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "vocabulary_")
        return np.asarray(self.vocabulary_.terms, dtype=object)


def coo_csv(X) -> str:
    """Coordinate dump ``row,col,weight`` of the non-zeros, row-major."""
    X = sp.csr_matrix(X)
    X.sort_indices()
    coo = X.tocoo()
    lines = ["row,col,weight"]
    lines += [f"{r},{c},{repr(float(w))}" for r, c, w in zip(coo.row, coo.col, coo.data)]
    return "\n".join(lines) + "\n"


# -- class-based TF-IDF ------------------------------------------------------

@dataclass(frozen=True)
class ClassTermStats:
    """Per-class raw term counts.

    ``term_freq[i, t]`` counts term ``t`` in class ``i``; ``class_word_total``
    sums rows, ``term_total`` sums columns, and ``m`` is the number of
    documents (or an explicit override).
    """

    class_names: Tuple[Hashable, ...]
    terms: Tuple[str, ...]
    term_freq: np.ndarray
    m: int

    @property
    def class_word_total(self) -> np.ndarray:
        return self.term_freq.sum(axis=1)

    @property
    def term_total(self) -> np.ndarray:
        return self.term_freq.sum(axis=0)


def class_term_stats(token_lists: Sequence[Sequence[str]], classes: Sequence[Hashable],
                     class_names: Optional[Sequence[Hashable]] = None,
                     m: Optional[int] = None) -> ClassTermStats:
    """Aggregate token counts by class.

    ``class_names`` fixes the row order and may name classes with no
    documents (their rows stay zero). Terms are every token seen, sorted.
    """
    if len(token_lists) != len(classes):
        raise ValueError("every document needs exactly one class")
    if class_names is None:
        class_names = sorted(set(classes))
    row_of = {c: i for i, c in enumerate(class_names)}
    missing = set(classes) - set(row_of)
    if missing:
        raise ValueError(f"classes not listed in class_names: {sorted(map(str, missing))}")
    per_class = [Counter() for _ in class_names]
    for tokens, c in zip(token_lists, classes):
        per_class[row_of[c]].update(tokens)
    terms = sorted(set().union(*per_class)) if per_class else []
    col = {t: j for j, t in enumerate(terms)}
    tf = np.zeros((len(class_names), len(terms)), dtype=float)
    for i, counts in enumerate(per_class):
        for t, n in counts.items():
            tf[i, col[t]] = n
    return ClassTermStats(
        class_names=tuple(class_names),
        terms=tuple(terms),
        term_freq=tf,
        m=len(token_lists) if m is None else int(m),
    )


@dataclass(frozen=True)
class ClassTfidf:
    class_names: Tuple[Hashable, ...]
    terms: Tuple[str, ...]
    weights: np.ndarray


def ctfidf(stats: ClassTermStats) -> ClassTfidf:
    """``weight(i, t) = (t_i / w_i) * ln(m / sum_j t_j)``.

    A class with no words gets a zero row. The log factor turns negative
    for terms whose corpus count exceeds ``m``.
    """
    tf = stats.term_freq
    w = stats.class_word_total
    total = stats.term_total
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(w[:, None] > 0, tf / np.where(w > 0, w, 1.0)[:, None], 0.0)
        idf = np.log(stats.m / total) if stats.m > 0 else np.zeros_like(total)
    weights = rel * idf[None, :]
    weights[tf == 0] = 0.0
    return ClassTfidf(class_names=stats.class_names, terms=stats.terms, weights=weights)


def top_terms(table: ClassTfidf, cls: Hashable, n: int = 10) -> List[Tuple[str, float]]:
    """Highest-weighted positive terms of ``cls``, ties broken by term."""
    if n < 1:
        raise ValueError("n must be >= 1")
    try:
        row = table.class_names.index(cls)
    except ValueError:
        raise KeyError(f"unknown class {cls!r}") from None
    weights = table.weights[row]
    ranked = sorted(
        ((table.terms[j], float(weights[j])) for j in np.flatnonzero(weights > 0)),
        key=lambda tw: (-tw[1], tw[0]),
    )
    return ranked[:n]
