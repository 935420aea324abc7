"""Regenerate tests/fixtures/corpus: 60 Solidity files in 3 category folders.

Run from the repository root: ``python tests/fixtures/generate_corpus.py``.
"""
import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from synth import address_for, solidity_corpus  # noqa: E402

CATEGORIES = ("exchanges", "finance", "games")
PER_CLASS = 20


def main():
    root = HERE / "corpus"
    if root.exists():
        shutil.rmtree(root)
    for i, (label, source) in enumerate(solidity_corpus(CATEGORIES, PER_CLASS, seed=2024)):
        path = root / label / f"{address_for(f'{label}-{i}')}.sol"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(source, encoding="utf-8")


if __name__ == "__main__":
    main()
