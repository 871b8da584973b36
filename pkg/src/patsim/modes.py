"""Recurring-pattern codebooks, word frequencies per time block and mode clustering."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .distances import DistanceSpec, distance
from .ingest import format_ns, to_ns


class ModesError(ValueError):
    pass


@dataclass
class PatternCodebook:
    """Exemplar windows ("words") in creation order."""

    exemplars: list
    assignment_radius: float
    measure: DistanceSpec

    def __len__(self):
        return len(self.exemplars)

    def nearest(self, window) -> tuple:
        """``(index, distance)`` of the closest exemplar; ties go to the older word."""
        best, best_i = None, -1
        for i, ex in enumerate(self.exemplars):
            d = distance(window, ex, self.measure)
            if best is None or d < best:
                best, best_i = d, i
        return best_i, best


def build_codebook(windows: Sequence, measure: DistanceSpec, radius: float) -> PatternCodebook:
    """Leader clustering in time order.

    A window within ``radius`` of an existing exemplar is absorbed; otherwise it
    becomes a new exemplar. The result depends on input order.
    """
    book = PatternCodebook([], float(radius), measure)
    for w in windows:
        if book.exemplars:
            _, d = book.nearest(w)
            if d <= radius:
                continue
        book.exemplars.append(w)
    return book


@dataclass(frozen=True)
class FrequencyBlock:
    start: int
    end: int
    counts: np.ndarray = field(compare=False)
    overflow: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.overflow


def word_frequencies(windows: Sequence, codebook: PatternCodebook, block) -> list:
    """Count nearest-exemplar assignments per time block.

    Blocks are half-open ``[start, start + block)`` intervals tiling the span
    from the first window start; each window is placed by its start time.
    Windows farther than the radius from every exemplar go to the overflow bin.
    """
    if not len(codebook):
        raise ModesError("codebook is empty")
    if not windows:
        return []
    width = to_ns(block)
    span = max(w.end_ts - w.start_ts for w in windows)
    if width <= 0 or width < span:
        raise ModesError(f"block must cover at least one window span ({span} ns)")
    t0 = windows[0].start_ts
    n_blocks = (windows[-1].start_ts - t0) // width + 1
    counts = np.zeros((n_blocks, len(codebook)), dtype=np.int64)
    overflow = np.zeros(n_blocks, dtype=np.int64)
    for w in windows:
        b = (w.start_ts - t0) // width
        i, d = codebook.nearest(w)
        if d <= codebook.assignment_radius:
            counts[b, i] += 1
        else:
            overflow[b] += 1
    return [FrequencyBlock(t0 + b * width, t0 + (b + 1) * width, counts[b], int(overflow[b]))
            for b in range(n_blocks)]


@dataclass
class ModeAssignment:
    blocks: list
    cluster_count: int
    centers: np.ndarray = field(repr=False)
    proportions: np.ndarray = field(default=None, repr=False)
    inertia: list = field(default_factory=list)
    iterations: int = 0

    @property
    def labels(self) -> np.ndarray:
        return np.array([b[2] for b in self.blocks], dtype=np.int64)


def _proportions(vectors: np.ndarray) -> np.ndarray:
    sums = vectors.sum(axis=1, keepdims=True)
    return np.divide(vectors, sums, out=np.zeros_like(vectors), where=sums > 0)


def _sqdist(x, centers):
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = 100) -> tuple:
    """Lloyd's k-means with seeded farthest-point initialization.

    Returns ``(labels, centers, inertia_history, iterations)``. Empty clusters
    are reseeded with the point farthest from its current center.
    """
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    centers = [x[first]]
    mind = ((x - x[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(mind))
        centers.append(x[nxt])
        mind = np.minimum(mind, ((x - x[nxt]) ** 2).sum(axis=1))
    centers = np.array(centers, dtype=np.float64)

    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sqdist(x, centers)
        new = np.argmin(d, axis=1)
        inertia = float(d[np.arange(n), new].sum())
        if history:
            assert inertia <= history[-1] * (1 + 1e-12) + 1e-12, "k-means objective increased"
        history.append(inertia)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
        for c in range(k):
            if not (labels == c).any():
                own = d[np.arange(n), labels]
                far = int(np.argmax(own))
                centers[c] = x[far]
                labels[far] = c
    return labels, centers, history, it


def cluster_modes(frequencies: Sequence, k: int, seed: int = 0,
                  max_iter: int = 100) -> ModeAssignment:
    """Cluster time blocks by their word-frequency proportions.

    ``frequencies`` holds :class:`FrequencyBlock` objects or plain count
    vectors. The overflow bin counts as one more word.
    """
    if k < 1:
        raise ModesError("k must be positive")
    if k > len(frequencies):
        raise ModesError(f"k={k} exceeds the number of blocks ({len(frequencies)})")
    rows, spans = [], []
    for i, f in enumerate(frequencies):
        if isinstance(f, FrequencyBlock):
            rows.append(np.append(f.counts, f.overflow).astype(np.float64))
            spans.append((f.start, f.end))
        else:
            rows.append(np.asarray(f, dtype=np.float64))
            spans.append((i, i + 1))
    raw = np.vstack(rows)
    if np.any(raw < 0):
        raise ModesError("frequency vectors must be nonnegative")
    x = _proportions(raw)
    labels, centers, history, iters = kmeans(x, k, seed, max_iter)
    blocks = [(spans[i], raw[i], int(labels[i])) for i in range(len(rows))]
    return ModeAssignment(blocks, k, centers, x, history, iters)


def write_modes_csv(assignment: ModeAssignment, path):
    """Block start/end, raw counts per word (+ overflow) and cluster id."""
    width = assignment.blocks[0][1].shape[0] if assignment.blocks else 0
    names = [f"word_{i}" for i in range(width - 1)] + ["overflow"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_start", "block_end", *names, "cluster"])
        for (start, end), counts, label in assignment.blocks:
            w.writerow([format_ns(start), format_ns(end), *(int(c) for c in counts), label])
