"""Report files: CSV tables, ASCII heatmaps and grayscale PGM images.

Heatmaps shade larger values darker, so a good confusion matrix of distances
shows a light diagonal on a dark background.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

#: Light to dark.
GLYPHS = " .:-=+*#%@"


def _scaled(matrix, lo=None, hi=None) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    lo = float(np.nanmin(m)) if lo is None else lo
    hi = float(np.nanmax(m)) if hi is None else hi
    if hi <= lo:
        return np.zeros_like(m)
    return np.clip((m - lo) / (hi - lo), 0.0, 1.0)


def ascii_heatmap(matrix, labels: Sequence[str] = (), lo=None, hi=None) -> str:
    """One glyph per cell, darker for larger values; rows labelled if given."""
    s = _scaled(matrix, lo, hi)
    idx = np.minimum((s * len(GLYPHS)).astype(int), len(GLYPHS) - 1)
    width = max((len(str(x)) for x in labels), default=0)
    lines = []
    for i, row in enumerate(idx):
        name = str(labels[i]).ljust(width) + " |" if labels else "|"
        lines.append(name + "".join(GLYPHS[j] * 2 for j in row) + "|")
    return "\n".join(lines) + "\n"


def pgm_bytes(matrix, cell: int = 8, lo=None, hi=None) -> bytes:
    """Binary PGM (P5); each cell is a ``cell`` x ``cell`` block, dark = large."""
    s = _scaled(matrix, lo, hi)
    gray = np.round(255 * (1.0 - s)).astype(np.uint8)
    img = np.kron(gray, np.ones((cell, cell), np.uint8))
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def write_matrix_csv(path, matrix, row_labels: Sequence[str], col_labels: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["model"] + list(col_labels))
        for label, row in zip(row_labels, np.asarray(matrix, float)):
            w.writerow([label] + [f"{v:.6f}" for v in row])


def write_rows_csv(path, rows: Sequence[Mapping]) -> None:
    """CSV with the union of keys as header, in first-seen order."""
    header: list = []
    for r in rows:
        header.extend(k for k in r if k not in header)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=header)
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})


def _cell(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def write_heatmap(stem, matrix, labels: Sequence[str]) -> list:
    """``stem.txt`` (ASCII) and ``stem.pgm``; returns both paths."""
    stem = Path(stem)
    txt = stem.with_suffix(".txt")
    pgm = stem.with_suffix(".pgm")
    txt.write_text(ascii_heatmap(matrix, labels), encoding="utf-8")
    pgm.write_bytes(pgm_bytes(matrix))
    return [txt, pgm]


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.ndarray, tuple, set, frozenset)):
        return sorted(o) if isinstance(o, (set, frozenset)) else list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
