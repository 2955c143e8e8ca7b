"""Named cross-correlation fixtures and plain-text matrix IO."""
from __future__ import annotations

from pathlib import Path

import numpy as np

APPENDIX_PRE = np.array(
    [
        [1, 0, 3, 1, 0, 0, 0, 0],
        [1, 0, 0, 0, 1, 0, 0, 0],
        [0, 1, 0, 0, 0, 1, 0, 0],
        [0, 1, 0, 0, 0, 0, 1, 0],
        [0, 0, 3, 0, 0, 0, 0, 1],
    ],
    dtype=float,
)

# Third column (index 2) zeroed.
APPENDIX_POST = np.array(
    [
        [1, 0, 0, 1, 0, 0, 0, 0],
        [1, 0, 0, 0, 1, 0, 0, 0],
        [0, 1, 0, 0, 0, 1, 0, 0],
        [0, 1, 0, 0, 0, 0, 1, 0],
        [0, 0, 0, 0, 0, 0, 0, 1],
    ],
    dtype=float,
)

FIXTURES = {
    "appendix-pre": APPENDIX_PRE,
    "appendix-post": APPENDIX_POST,
}


def fixture(name: str) -> np.ndarray:
    try:
        return FIXTURES[name].copy()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; known: {sorted(FIXTURES)}") from None


def parse_matrix_literal(text: str) -> np.ndarray:
    """Parse ``"1 0 3; 1 0 0"`` (rows separated by ``;`` or newlines)."""
    rows = [r.strip() for r in text.replace(";", "\n").splitlines() if r.strip()]
    if not rows:
        raise ValueError("empty matrix literal")
    data = [[float(x) for x in r.replace(",", " ").split()] for r in rows]
    widths = {len(r) for r in data}
    if len(widths) != 1:
        raise ValueError(f"ragged matrix literal: row lengths {sorted(widths)}")
    return np.array(data, dtype=float)


def load_matrix(path: str | Path) -> np.ndarray:
    """Read a whitespace-separated matrix file; ``#`` starts a comment."""
    lines = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    return parse_matrix_literal("\n".join(lines))


def resolve_matrix(source: str) -> np.ndarray:
    """Fixture name, existing file path, or inline literal, in that order."""
    if source in FIXTURES:
        return fixture(source)
    p = Path(source)
    if p.exists():
        return load_matrix(p)
    return parse_matrix_literal(source)
