"""Atomic file output, CSV reports and the SVG scatter plot."""
from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "atomic_write_text",
    "csv_text",
    "write_csv",
    "read_csv",
    "format_float",
    "PALETTE",
    "scatter_svg",
    "emit_scatter_svg",
]

# Category colors, assigned to categories in sorted order; anything past
# the sixteenth category is drawn in FALLBACK_COLOR.
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
    "#8c6d31", "#843c39", "#7b4173", "#3182bd",
)
FALLBACK_COLOR = "#c7c7c7"

VIEWBOX = 1000.0
MARGIN = 0.05


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(x) -> str:
    """Shortest round-tripping repr, so reruns produce identical bytes."""
    if x is None:
        return ""
    x = float(x)
    if np.isnan(x):
        return "nan"
    return repr(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write_text(path, csv_text(header, rows))


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _scale(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    inner = VIEWBOX * (1 - 2 * MARGIN)
    if hi - lo <= 0:
        return np.full(values.shape, VIEWBOX / 2)
    return VIEWBOX * MARGIN + (values - lo) / (hi - lo) * inner


def scatter_svg(coords, categories: Optional[Sequence] = None, radius: float = 4.0) -> str:
    """Standalone SVG: one circle per point, min-max scaled into a 5% margin."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[0] == 0 or coords.shape[1] != 2:
        raise ValueError("scatter needs a non-empty n x 2 coordinate array")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite")
    if categories is None:
        categories = [""] * len(coords)
    if len(categories) != len(coords):
        raise ValueError("categories must align with coordinates")
    names = sorted({str(c) for c in categories})
    colors = {name: PALETTE[i] if i < len(PALETTE) else FALLBACK_COLOR
              for i, name in enumerate(names)}
    xs = _scale(coords[:, 0])
    # SVG y grows downward; flip so the plot reads like a chart.
    ys = VIEWBOX - _scale(coords[:, 1])
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {VIEWBOX:g} {VIEWBOX:g}" '
        f'width="{VIEWBOX:g}" height="{VIEWBOX:g}">',
        f'<rect x="0" y="0" width="{VIEWBOX:g}" height="{VIEWBOX:g}" fill="#ffffff"/>',
    ]
    for x, y, c in zip(xs, ys, categories):
        lines.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="{radius:g}" fill="{colors[str(c)]}">'
                     f'<title>{_escape(str(c))}</title></circle>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_scatter_svg(coords, categories, path) -> None:
    atomic_write_text(path, scatter_svg(coords, categories))
