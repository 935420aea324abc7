"""Solidity source splitting: code vs. comments, and declaration names.

The lexer works on the UTF-8 encoding of the source, so span offsets are
byte offsets. Every delimiter it looks for is ASCII and UTF-8 continuation
bytes never collide with ASCII, so slicing at span boundaries always
yields valid UTF-8.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, List, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

__all__ = [
    "Span",
    "FeatureMode",
    "ExtractionResult",
    "lex",
    "split",
    "extract_identifiers",
    "render",
    "SolidityViewExtractor",
]

CODE = "code"
LINE_COMMENT = "line_comment"
BLOCK_COMMENT = "block_comment"
STRING_LITERAL = "string_literal"

DECLARATION_KEYWORDS = ("contract", "function", "event", "interface", "library")

_CODE_STOP = re.compile(rb"[\"']|//|/\*")
_DECLARATION = re.compile(
    r"(?<![A-Za-z0-9_$])(?:%s)\s+([A-Za-z_$][A-Za-z0-9_$]*)"
    % "|".join(DECLARATION_KEYWORDS)
)


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    kind: str

    @property
    def is_comment(self) -> bool:
        return self.kind in (LINE_COMMENT, BLOCK_COMMENT)


class FeatureMode(str, enum.Enum):
    """Which textual view of a contract feeds the vectorizer."""

    FC = "fc"
    OC = "oc"
    OCom = "ocom"
    EF = "ef"

    @classmethod
    def parse(cls, value) -> "FeatureMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for mode in cls:
            if mode.value == key:
                return mode
        raise ValueError(f"unknown feature mode {value!r}; expected one of fc, oc, ocom, ef")

    @property
    def is_text(self) -> bool:
        """Comments are prose; every other view is code."""
        return self is FeatureMode.OCom


@dataclass(frozen=True)
class ExtractionResult:
    full_code: str
    only_code: str
    comments: str
    identifiers: str


def _scan_string(data: bytes, i: int, quote: int) -> int:
    """Return the end offset of a literal opened at ``i``.

    An unterminated literal stops before the next newline so a stray quote
    cannot swallow the rest of the file.
    """
    n = len(data)
    j = i + 1
    while j < n:
        c = data[j]
        if c == 0x5C:  # backslash escapes the next byte
            j += 2
            continue
        if c == quote:
            return j + 1
        if c == 0x0A:
            return j
        j += 1
    return n


def _lex_bytes(data: bytes) -> List[Span]:
    spans: List[Span] = []
    n = len(data)
    pos = 0
    code_start = 0

    def flush_code(upto: int) -> None:
        if upto > code_start:
            spans.append(Span(code_start, upto, CODE))

    while pos < n:
        m = _CODE_STOP.search(data, pos)
        if m is None:
            break
        start = m.start()
        token = m.group()
        if token in (b'"', b"'"):
            end = min(_scan_string(data, start, token[0]), n)
            kind = STRING_LITERAL
        elif token == b"//":
            nl = data.find(b"\n", start)
            end = n if nl < 0 else nl
            kind = LINE_COMMENT
        else:
            close = data.find(b"*/", start + 2)
            end = n if close < 0 else close + 2
            kind = BLOCK_COMMENT
        flush_code(start)
        spans.append(Span(start, end, kind))
        pos = code_start = end
    flush_code(n)
    return spans


def lex(source: str) -> List[Span]:
    """Partition ``source`` into code, comment and string-literal spans.

    Offsets index the UTF-8 encoding. Comment openers inside quoted
    literals are not comments, the first ``*/`` closes a block comment,
    and an unterminated block comment runs to the end of input.

    >>> [(s.start, s.end, s.kind) for s in lex("uint a; // set a")]
    [(0, 8, 'code'), (8, 16, 'line_comment')]
    """
    return _lex_bytes(source.encode("utf-8"))


def _comment_interior(chunk: bytes, kind: str) -> bytes:
    if kind == LINE_COMMENT:
        return chunk[2:]
    body = chunk[2:]
    if len(chunk) >= 4 and body.endswith(b"*/"):
        body = body[:-2]
    return body


def _views(source: str):
    data = source.encode("utf-8")
    spans = _lex_bytes(data)
    code_parts: List[bytes] = []
    masked_parts: List[bytes] = []
    comment_parts: List[str] = []
    for span in spans:
        chunk = data[span.start:span.end]
        if span.is_comment:
            text = _comment_interior(chunk, span.kind).decode("utf-8").strip()
            if text:
                comment_parts.append(text)
            continue
        code_parts.append(chunk)
        masked_parts.append(b" " if span.kind == STRING_LITERAL else chunk)
    only_code = b"".join(code_parts).decode("utf-8")
    masked = b"".join(masked_parts).decode("utf-8")
    return only_code, "\n".join(comment_parts), masked


def split(source: str) -> ExtractionResult:
    """Split a source into its full, code-only and comment-only views.

    Comment delimiters are dropped, each comment is stripped of surrounding
    whitespace, and non-empty comments are joined with a newline.
    """
    only_code, comments, masked = _views(source)
    return ExtractionResult(
        full_code=source,
        only_code=only_code,
        comments=comments,
        identifiers=_identifiers_from_masked(masked),
    )


def _identifiers_from_masked(masked_code: str) -> str:
    return " ".join(m.group(1) for m in _DECLARATION.finditer(masked_code))


def extract_identifiers(source: str) -> str:
    """Names declared by contract/function/event/interface/library keywords.

    Only code is searched: comments are removed and string literals blanked
    out. Anonymous declarations such as ``function()`` contribute nothing.
    """
    return _identifiers_from_masked(_views(source)[2])


def render(source: str, mode) -> str:
    mode = FeatureMode.parse(mode)
    if mode is FeatureMode.FC:
        return source
    result = split(source)
    if mode is FeatureMode.OC:
        return result.only_code
    if mode is FeatureMode.OCom:
        return result.comments
    return result.identifiers


class SolidityViewExtractor(TransformerMixin, BaseEstimator):
    """Map raw sources to one textual view (FC, OC, OCom or EF).

    Stateless, so it can sit at the head of a pipeline in front of a
    vectorizer.
    """

    def __init__(self, mode="fc"):
        self.mode = mode

    def fit(self, X, y=None):
        FeatureMode.parse(self.mode)
        return self

    def transform(self, X: Iterable[str]) -> List[str]:
        mode = FeatureMode.parse(self.mode)
        return [render(source, mode) for source in X]


def render_all(sources: Sequence[str], mode) -> List[str]:
    mode = FeatureMode.parse(mode)
    return [render(s, mode) for s in sources]
