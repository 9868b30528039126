"""Budgeted frame selection over a score vector, plus coverage metrics.

The timeline is split into B equal bins and the k_bin best frames of
each bin are kept, so a budget m = B * k_bin can spend diversity across
time (many bins) or concentration (one bin, global top-m). Both extremes
are exact specializations:

    B = 1, k_bin = m   -> global top-m
    B = m, k_bin = 1   -> one frame per bin

Selection depends only on score order, never on scale or offset.

Coverage asks a blunt retrieval question: did at least one selected
frame land inside an annotated evidence interval? The rate over a
dataset is the fraction of queries answered yes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .io import atomic_write_text

__all__ = [
    "SelectionConfig",
    "Selection",
    "bin_partition",
    "select",
    "uniform_select",
    "coverage",
    "coverage_rate",
    "save_selections",
    "load_selections",
]


@dataclass(frozen=True)
class SelectionConfig:
    bins: int
    per_bin: int

    def __post_init__(self):
        if self.bins < 1 or self.per_bin < 1:
            raise ValueError("bins and per_bin must be at least 1")

    @property
    def budget(self) -> int:
        return self.bins * self.per_bin


@dataclass
class Selection:
    """Chosen frame indices, ascending, with their scores when known."""

    indices: np.ndarray
    scores: np.ndarray | None = None
    query_id: str = ""

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.size and np.any(np.diff(self.indices) <= 0):
            raise ValueError("indices must be strictly increasing")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64)
            if self.scores.shape != self.indices.shape:
                raise ValueError("scores must align with indices")


def bin_partition(n: int, bins: int) -> list[range]:
    """Split [0, n) into `bins` contiguous ranges; sizes differ by at most
    one and the first n % bins ranges carry the extra frame."""
    if n < 1 or bins < 1:
        raise ValueError("need n >= 1 and bins >= 1")
    if bins > n:
        raise ValueError(f"{bins} bins over {n} frames would leave a bin empty")
    base, extra = divmod(n, bins)
    out, start = [], 0
    for b in range(bins):
        size = base + (1 if b < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


def select(scores, config: SelectionConfig, query_id: str = "") -> Selection:
    """Keep the per_bin highest scores inside each bin; ties go to the
    lower frame index. A bin smaller than per_bin is taken whole."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError("scores must be one-dimensional")
    chosen: list[int] = []
    for bin_range in bin_partition(scores.shape[0], config.bins):
        local = scores[bin_range.start : bin_range.stop]
        k = min(config.per_bin, len(local))
        # Stable sort of negated scores: descending score, ascending index.
        order = np.argsort(-local, kind="stable")[:k]
        chosen.extend(bin_range.start + i for i in order)
    chosen.sort()
    idx = np.array(chosen, dtype=np.int64)
    return Selection(indices=idx, scores=scores[idx], query_id=query_id)


def uniform_select(n: int, m: int, query_id: str = "") -> Selection:
    """Evenly spaced baseline: floor(i * n / m), duplicates dropped."""
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    raw = (np.arange(m, dtype=np.int64) * n) // m
    idx = np.unique(raw)
    return Selection(indices=idx, scores=None, query_id=query_id)


def coverage(selection: Selection, segments, fps: float) -> bool:
    """True iff any selected frame timestamp (index / fps) falls inside a
    closed [start, end] segment."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    if selection.indices.size == 0:
        return False
    t = selection.indices / fps
    for start, end in segments:
        if np.any((t >= start) & (t <= end)):
            return True
    return False


def coverage_rate(selections: Sequence[Selection], records) -> float:
    """Fraction of (selection, annotation) pairs with coverage.

    Records need `segments` and `fps` attributes; pairs align by position.
    """
    if len(selections) == 0:
        raise ValueError("coverage_rate over an empty dataset is undefined")
    if len(selections) != len(records):
        raise ValueError(
            f"{len(selections)} selections vs {len(records)} annotation records"
        )
    hits = sum(
        coverage(sel, rec.segments, rec.fps) for sel, rec in zip(selections, records)
    )
    return hits / len(selections)


def save_selections(path, selections: Sequence[Selection]) -> None:
    """One JSON record per line: query id, indices, scores (null if unscored)."""
    lines = []
    for sel in selections:
        lines.append(
            json.dumps(
                {
                    "query_id": sel.query_id,
                    "indices": [int(i) for i in sel.indices],
                    "scores": None
                    if sel.scores is None
                    else [float(s) for s in sel.scores],
                },
                sort_keys=True,
            )
        )
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_selections(path) -> list[Selection]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        out.append(
            Selection(
                indices=np.asarray(obj["indices"], dtype=np.int64),
                scores=None
                if obj.get("scores") is None
                else np.asarray(obj["scores"], dtype=np.float64),
                query_id=str(obj.get("query_id", "")),
            )
        )
    return out
