"""Corpus model, JSONL/directory ingestion, label consolidation and splits."""
from __future__ import annotations

import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from decimal import Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .extract import split as split_source
from .io import atomic_write_text
from .rng import Xoshiro256

__all__ = [
    "Document",
    "Corpus",
    "LabelMap",
    "SplitSpec",
    "CorpusError",
    "OTHER",
    "load_jsonl",
    "dump_jsonl",
    "load_directory",
    "consolidate_labels",
    "stratified_split",
    "stratified_split_indices",
    "kfold",
    "stratified_kfold_indices",
    "filter_short_comments",
    "is_short_comment",
]

OTHER = "other"

_ADDRESS = re.compile(r"^0x[0-9a-f]{40}$")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    source: str
    address: str = ""
    label: Optional[str] = None
    dapp: Optional[str] = None

    def __post_init__(self):
        if not self.source:
            raise CorpusError("document source must be non-empty")
        if self.address and not _ADDRESS.match(self.address):
            raise CorpusError(f"malformed address {self.address!r}")

    def to_json(self) -> dict:
        row = {"address": self.address, "source": self.source}
        if self.label is not None:
            row["label"] = self.label
        if self.dapp is not None:
            row["dapp"] = self.dapp
        return row


@dataclass(frozen=True)
class Corpus:
    documents: Tuple[Document, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))

    def __len__(self):
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __getitem__(self, i):
        return self.documents[i]

    @property
    def label_names(self) -> List[str]:
        return sorted({d.label for d in self.documents if d.label})

    @property
    def labels(self) -> List[Optional[str]]:
        return [d.label for d in self.documents]

    @property
    def sources(self) -> List[str]:
        return [d.source for d in self.documents]

    def subset(self, indices: Iterable[int]) -> "Corpus":
        return Corpus(tuple(self.documents[i] for i in indices))


@dataclass(frozen=True)
class LabelMap:
    kept: Tuple[str, ...]
    other_name: str = OTHER

    def __call__(self, label: Optional[str]) -> Optional[str]:
        if label is None:
            return None
        return label if label in self.kept else self.other_name


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    folds: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise CorpusError("test_fraction must lie in (0, 1)")
        if self.folds < 1:
            raise CorpusError("folds must be positive")
        if not 0 <= self.seed < 2**64:
            raise CorpusError("seed must be an unsigned 64-bit integer")


# -- ingestion ---------------------------------------------------------------

def _normalize_address(value, where: str) -> str:
    if value is None or value == "":
        return ""
    address = str(value).lower()
    if not _ADDRESS.match(address):
        raise CorpusError(f"malformed address {value!r} {where}")
    return address


def load_jsonl(path) -> Corpus:
    """Read a corpus file: one JSON object per non-blank line.

    ``source`` is required; ``address``, ``label`` and ``dapp`` are
    optional and unknown fields are ignored.
    """
    documents = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON at line {lineno}: {exc.msg}") from None
            if not isinstance(row, dict):
                raise CorpusError(f"expected a JSON object at line {lineno}")
            source = row.get("source")
            if not isinstance(source, str) or not source:
                raise CorpusError(f"missing source at line {lineno}")
            label = row.get("label") or None
            dapp = row.get("dapp") or None
            documents.append(Document(
                source=source,
                address=_normalize_address(row.get("address"), f"at line {lineno}"),
                label=None if label is None else str(label),
                dapp=None if dapp is None else str(dapp),
            ))
    return Corpus(tuple(documents))


def dump_jsonl(corpus: Iterable[Document]) -> str:
    return "".join(
        json.dumps(doc.to_json(), ensure_ascii=False, sort_keys=True) + "\n" for doc in corpus
    )


def load_directory(root, labels_from_dirs: bool = False) -> Corpus:
    """Every ``*.sol`` file under ``root`` becomes a document.

    Files are visited in sorted path order. A file stem that is a
    contract address becomes the document address.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"not a directory: {root}")
    documents = []
    for path in sorted(root.rglob("*.sol")):
        source = path.read_text(encoding="utf-8")
        if not source:
            continue
        stem = path.stem.lower()
        label = path.parent.name if labels_from_dirs and path.parent != root else None
        documents.append(Document(
            source=source,
            address=stem if _ADDRESS.match(stem) else "",
            label=label,
        ))
    return Corpus(tuple(documents))


# -- labels ------------------------------------------------------------------

def consolidate_labels(corpus: Corpus, k: int = 5, other_name: str = OTHER) -> Tuple[Corpus, LabelMap]:
    """Keep the ``k`` most frequent labels and fold the rest into ``other``.

    Frequency ties are broken lexicographically. Documents already labelled
    ``other`` never compete for a kept slot, which makes the operation
    idempotent.
    """
    if k < 1:
        raise CorpusError("k must be >= 1")
    counts = Counter(d.label for d in corpus if d.label)
    if not counts:
        raise CorpusError("no labeled documents")
    ranked = sorted((name for name in counts if name != other_name),
                    key=lambda name: (-counts[name], name))
    label_map = LabelMap(kept=tuple(ranked[:k]), other_name=other_name)
    docs = tuple(
        d if d.label is None or d.label == label_map(d.label) else replace(d, label=label_map(d.label))
        for d in corpus
    )
    return Corpus(docs), label_map


# -- splitting ---------------------------------------------------------------

def _round_half_up(x: Decimal) -> int:
    return int(math.floor(x + Decimal("0.5")))


def _group_by_label(labels: Sequence[Optional[str]]) -> Dict[str, List[int]]:
    groups: Dict[str, List[int]] = {}
    for i, label in enumerate(labels):
        groups.setdefault("" if label is None else label, []).append(i)
    return dict(sorted(groups.items()))


def stratified_split_indices(labels: Sequence[Optional[str]], test_fraction: float,
                             seed: int) -> Tuple[List[int], List[int]]:
    """Per class, ``round_half_up(test_fraction * size)`` indices go to test.

    Classes are visited in sorted order and share one generator; each
    class's indices are shuffled and the first ones taken. Both returned
    lists are in ascending (corpus) order.
    """
    SplitSpec(test_fraction=test_fraction, seed=seed)
    if any(label is None for label in labels):
        raise CorpusError("stratified split requires every document to be labeled")
    rng = Xoshiro256(seed)
    fraction = Decimal(repr(float(test_fraction)))
    test: List[int] = []
    for name, members in _group_by_label(labels).items():
        if len(members) < 2:
            raise CorpusError(f"class {name!r} has fewer than 2 documents; cannot stratify")
        order = rng.shuffle(list(members))
        test.extend(order[:_round_half_up(fraction * len(members))])
    test_set = set(test)
    train = [i for i in range(len(labels)) if i not in test_set]
    return train, sorted(test)


def stratified_split(corpus: Corpus, spec: SplitSpec) -> Tuple[Corpus, Corpus]:
    train, test = stratified_split_indices(corpus.labels, spec.test_fraction, spec.seed)
    return corpus.subset(train), corpus.subset(test)


def stratified_kfold_indices(labels: Sequence[Optional[str]], k: int,
                             seed: int) -> List[Tuple[List[int], List[int]]]:
    """Seeded stratified k-fold assignment.

    Classes are visited in sorted order, each is shuffled, and its members
    are dealt to folds round-robin with the dealing position carried over
    from one class to the next. Per-class fold sizes therefore differ by at
    most one, and so do overall fold sizes.
    """
    if k < 2:
        raise CorpusError("k must be >= 2")
    if len(labels) < k:
        raise CorpusError(f"cannot make {k} folds from {len(labels)} documents")
    rng = Xoshiro256(seed)
    fold_of = [0] * len(labels)
    cursor = 0
    for name, members in _group_by_label(labels).items():
        if len(members) < k:
            warnings.warn(f"class {name!r} has {len(members)} documents, fewer than {k} folds",
                          stacklevel=2)
        for i in rng.shuffle(list(members)):
            fold_of[i] = cursor
            cursor = (cursor + 1) % k
    folds = []
    for f in range(k):
        val = [i for i, g in enumerate(fold_of) if g == f]
        train = [i for i, g in enumerate(fold_of) if g != f]
        folds.append((train, val))
    return folds


def kfold(corpus: Corpus, k: int, seed: int) -> List[Tuple[Corpus, Corpus]]:
    return [(corpus.subset(tr), corpus.subset(va))
            for tr, va in stratified_kfold_indices(corpus.labels, k, seed)]


# -- comment filter ----------------------------------------------------------

MIN_COMMENT_CHARS = 10
MIN_COMMENT_WORDS = 5


def is_short_comment(comments: str) -> bool:
    return len(comments) < MIN_COMMENT_CHARS or len(comments.split()) < MIN_COMMENT_WORDS


@dataclass(frozen=True)
class FilterResult:
    retained: Tuple[Document, ...]
    retained_indices: Tuple[int, ...]
    excluded: int
    excluded_fraction: float = field(default=0.0)


def filter_short_comments(documents: Sequence[Document],
                          comments: Optional[Sequence[str]] = None) -> FilterResult:
    """Drop documents whose comments have < 10 characters or < 5 words."""
    if comments is None:
        comments = [split_source(d.source).comments for d in documents]
    if len(comments) != len(documents):
        raise CorpusError("comments must align with documents")
    keep = [i for i, c in enumerate(comments) if not is_short_comment(c)]
    excluded = len(documents) - len(keep)
    return FilterResult(
        retained=tuple(documents[i] for i in keep),
        retained_indices=tuple(keep),
        excluded=excluded,
        excluded_fraction=excluded / len(documents) if documents else 0.0,
    )


def write_jsonl(corpus: Iterable[Document], path) -> None:
    atomic_write_text(path, dump_jsonl(corpus))
