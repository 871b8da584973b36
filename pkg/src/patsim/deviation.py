"""Time deviation scoring: each window's distance to its closest predecessor."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .distances import (EUCLIDEAN, DistanceSpec, aligned_arrays, distance,
                        euclidean_arrays, select_top_features)
from .ingest import format_ns, parse_timestamp
from .windowing import Window

SENTINEL_MEASURE_CAP = "measure_cap"


class ScoringError(ValueError):
    pass


@dataclass
class DeviationSeries:
    """Per-window deviation scores in time order.

    ``best_match`` holds indices into ``windows`` (-1 when the window had no
    predecessor and received the sentinel score). ``ops`` counts scalar
    squared-difference operations for Euclidean runs.
    """

    timestamps: np.ndarray
    end_timestamps: np.ndarray
    scores: np.ndarray
    best_match: np.ndarray
    best_match_ts: np.ndarray
    spec_ids: list
    measure: str
    sentinel_policy: str = SENTINEL_MEASURE_CAP
    windows: list | None = field(default=None, repr=False)
    ops: int = 0

    def __len__(self):
        return self.scores.shape[0]

    @property
    def has_match(self) -> np.ndarray:
        return self.best_match >= 0

    @property
    def is_sentinel(self) -> np.ndarray:
        return self.best_match < 0

    def same_scores(self, other: "DeviationSeries") -> bool:
        """Exact (bitwise) equality of times, scores and matches."""
        return (np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.scores.view(np.int64), other.scores.view(np.int64))
                and np.array_equal(self.best_match, other.best_match))

    def head(self, n: int) -> "DeviationSeries":
        return DeviationSeries(
            self.timestamps[:n], self.end_timestamps[:n], self.scores[:n],
            self.best_match[:n], self.best_match_ts[:n], self.spec_ids[:n],
            self.measure, self.sentinel_policy,
            None if self.windows is None else self.windows[:n])

    @classmethod
    def from_scores(cls, timestamps, scores, measure: str = EUCLIDEAN,
                    end_timestamps=None, spec_id: str = "w0") -> "DeviationSeries":
        """Build a series from bare (timestamp, score) pairs, e.g. external risk scores."""
        ts = np.asarray(timestamps, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        ends = ts.copy() if end_timestamps is None else np.asarray(end_timestamps, dtype=np.int64)
        n = ts.shape[0]
        # external scores carry no match information; no entry is a sentinel
        return cls(ts, ends, scores, np.zeros(n, dtype=np.int64), ts.copy(),
                   [spec_id] * n, measure)


def _predecessors(i, origins, stops, history_depth):
    cand = np.flatnonzero(stops[:i] <= origins[i])
    if history_depth is not None:
        cand = cand[-history_depth:]
    return cand


def _new_series(windows, measure):
    n = len(windows)
    return DeviationSeries(
        timestamps=np.array([w.start_ts for w in windows], dtype=np.int64),
        end_timestamps=np.array([w.end_ts for w in windows], dtype=np.int64),
        scores=np.empty(n),
        best_match=np.full(n, -1, dtype=np.int64),
        best_match_ts=np.full(n, -1, dtype=np.int64),
        spec_ids=[w.spec_id for w in windows],
        measure=measure,
        windows=list(windows),
    )


def _check(windows):
    if not windows:
        raise ScoringError("no windows to score")
    origins = np.array([w.origin for w in windows], dtype=np.int64)
    if np.any(np.diff(origins) < 0):
        raise ScoringError("windows must be sorted by origin")
    stops = np.array([w.stop for w in windows], dtype=np.int64)
    return origins, stops


def _resume(series, prefix, windows):
    if prefix is None:
        return 0
    n = len(prefix)
    if n > len(windows):
        raise ScoringError("prefix is longer than the window list")
    if not np.array_equal(prefix.timestamps, series.timestamps[:n]):
        raise ScoringError("prefix does not match the leading windows")
    if prefix.measure != series.measure:
        raise ScoringError("prefix was scored with a different measure")
    series.scores[:n] = prefix.scores
    series.best_match[:n] = prefix.best_match
    series.best_match_ts[:n] = prefix.best_match_ts
    series.ops = prefix.ops
    return n


def _run_targets(series, start, score_one, workers):
    idx = range(start, len(series))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score_one, idx))
    else:
        results = [score_one(i) for i in idx]
    windows = series.windows
    for i, (best, best_j, ops) in zip(idx, results):
        series.scores[i] = best
        series.best_match[i] = best_j
        if best_j >= 0:
            series.best_match_ts[i] = windows[best_j].start_ts
        series.ops += ops
    return series


def score_windows(windows: Sequence, dist: DistanceSpec, history_depth: int | None = None,
                  prefix: DeviationSeries | None = None, workers: int = 1) -> DeviationSeries:
    """Score every window by the minimum distance over its disjoint predecessors.

    Ties go to the earliest predecessor. Windows without predecessors get the
    measure's maximum (``inf`` for Euclidean/DTW, ``+1`` for cross-correlation).
    Passing an already-scored ``prefix`` of the same window list resumes from
    where it stopped without rescoring history. Targets are independent, so
    ``workers > 1`` scores them on a thread pool with identical results.
    """
    origins, stops = _check(windows)
    series = _new_series(windows, dist.measure)
    start = _resume(series, prefix, windows)
    euclid = dist.measure == EUCLIDEAN

    def score_one(i):
        counter = np.zeros(1, dtype=np.int64)
        target = windows[i]
        best, best_j = dist.cap, -1
        for j in _predecessors(i, origins, stops, history_depth):
            if euclid:
                a, b = aligned_arrays(target, windows[j], dist)
                d = float(euclidean_arrays(a, b, dist, counter=counter))
            else:
                d = distance(target, windows[j], dist)
            if best_j < 0 or d < best:
                best, best_j = d, int(j)
        return best, best_j, int(counter[0])

    return _run_targets(series, start, score_one, workers)


def score_windows_pruned(windows: Sequence, dist: DistanceSpec, history_depth: int | None = None,
                         prefix: DeviationSeries | None = None, workers: int = 1) -> DeviationSeries:
    """Exact early-abandoning variant of :func:`score_windows` for Euclidean distance.

    Candidates are visited newest first and abandoned as soon as their running
    lower bound exceeds the best distance found so far. The result is
    identical to the naive scorer.
    """
    if dist.measure != EUCLIDEAN:
        raise ScoringError("pruned scoring supports euclidean_slide only")
    origins, stops = _check(windows)
    series = _new_series(windows, dist.measure)
    start = _resume(series, prefix, windows)
    slide_mean = dist.slide_aggregation == "mean"

    def score_one(i):
        counter = np.zeros(1, dtype=np.int64)
        target = windows[i]
        best, best_j = math.inf, -1
        for j in _predecessors(i, origins, stops, history_depth)[::-1]:
            a, b = aligned_arrays(target, windows[j], dist)
            # averaging over offsets has no usable running bound
            bound = math.inf if slide_mean and a.shape[0] != b.shape[0] else best
            d = float(euclidean_arrays(a, b, dist, bound=bound, counter=counter))
            if best_j < 0 or d < best or (d == best and j < best_j):
                best, best_j = d, int(j)
        return best, best_j, int(counter[0])

    return _run_targets(series, start, score_one, workers)


def brute_force_scores(windows: Sequence, dist: DistanceSpec,
                       history_depth: int | None = None, kernel=None) -> tuple:
    """Reference scorer: full pairwise matrix, then min over the admissible lower triangle.

    Returns ``(scores, best_match)``. ``kernel`` overrides the pair distance.
    """
    kernel = kernel or (lambda a, b: distance(a, b, dist))
    n = len(windows)
    mat = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(n):
            mat[i, j] = kernel(windows[i], windows[j])
    scores = np.full(n, dist.cap)
    match = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        admissible = [j for j in range(i) if windows[j].stop <= windows[i].origin]
        if history_depth is not None:
            admissible = admissible[-history_depth:]
        if admissible:
            row = mat[i, admissible]
            k = int(np.argmin(row))
            scores[i] = row[k]
            match[i] = admissible[k]
    return scores, match


def merge_spec_scores(series_per_spec: Sequence[DeviationSeries], policy: str = "max") -> DeviationSeries:
    """Combine series from several window specs on the union of their timestamps.

    Each series holds its last score until its next window; at each instant
    the series that have started are combined by ``policy`` ('max' or 'mean').
    """
    if not series_per_spec:
        raise ScoringError("nothing to merge")
    if policy not in ("max", "mean"):
        raise ScoringError(f"unknown merge policy {policy!r}")
    measures = {s.measure for s in series_per_spec}
    if len(measures) > 1:
        raise ScoringError(f"cannot merge scores of different measures: {sorted(measures)}")
    if len(series_per_spec) == 1:
        return series_per_spec[0]
    grid = np.unique(np.concatenate([s.timestamps for s in series_per_spec]))
    n, m = grid.shape[0], len(series_per_spec)
    vals = np.full((m, n), np.nan)
    pos = np.full((m, n), -1, dtype=np.int64)
    for r, s in enumerate(series_per_spec):
        idx = np.searchsorted(s.timestamps, grid, side="right") - 1
        ok = idx >= 0
        vals[r, ok] = s.scores[idx[ok]]
        pos[r, ok] = idx[ok]
    out_scores = np.empty(n)
    ends = np.empty(n, dtype=np.int64)
    match = np.full(n, -1, dtype=np.int64)
    match_ts = np.full(n, -1, dtype=np.int64)
    spec_ids = []
    attach = all(s.windows is not None for s in series_per_spec)
    windows = [] if attach else None
    for c in range(n):
        live = np.flatnonzero(pos[:, c] >= 0)
        col = vals[live, c]
        top = int(live[np.argmax(col)])
        out_scores[c] = col.max() if policy == "max" else col.mean()
        src, k = series_per_spec[top], pos[top, c]
        ends[c] = src.end_timestamps[k]
        spec_ids.append(src.spec_ids[k])
        if attach:
            windows.append(src.windows[k])
        if src.best_match[k] >= 0:
            # index into the contributing series, not into the merged one
            match[c] = src.best_match[k]
            match_ts[c] = src.best_match_ts[k]
    return DeviationSeries(grid, ends, out_scores, match, match_ts, spec_ids,
                           series_per_spec[0].measure, windows=windows)


# -- export --------------------------------------------------------------------

def format_score(x: float) -> str:
    return repr(float(x))


def write_scores_csv(series: DeviationSeries, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "score", "best_match_timestamp", "end_timestamp", "spec_id"])
        for i in range(len(series)):
            bm = format_ns(series.best_match_ts[i]) if series.best_match[i] >= 0 else ""
            w.writerow([format_ns(series.timestamps[i]), format_score(series.scores[i]), bm,
                        format_ns(series.end_timestamps[i]), series.spec_ids[i]])


def read_scores_csv(path, measure: str | None = None) -> DeviationSeries:
    """Read a score CSV (``timestamp,score[,best_match_timestamp,...]``).

    Files without a ``best_match_timestamp`` column (external risk scores)
    are treated as having a match for every row.
    """
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ScoringError(f"{path}: no score rows")
    if "timestamp" not in rows[0] or "score" not in rows[0]:
        raise ScoringError(f"{path}: expected columns timestamp,score")
    ts = np.array([parse_timestamp(r["timestamp"]) for r in rows], dtype=np.int64)
    scores = np.array([float(r["score"]) for r in rows])
    ends = np.array([parse_timestamp(r["end_timestamp"]) if r.get("end_timestamp") else t
                     for r, t in zip(rows, ts)], dtype=np.int64)
    if "best_match_timestamp" in rows[0]:
        bm_ts = np.array([parse_timestamp(r["best_match_timestamp"]) if r["best_match_timestamp"]
                          else -1 for r in rows], dtype=np.int64)
        lookup = {int(t): i for i, t in enumerate(ts)}
        match = np.array([lookup.get(int(t), 0) if t >= 0 else -1 for t in bm_ts], dtype=np.int64)
    else:
        bm_ts = ts.copy()
        match = np.zeros(ts.shape[0], dtype=np.int64)
    spec_ids = [r.get("spec_id") or "w0" for r in rows]
    return DeviationSeries(ts, ends, scores, match, bm_ts, spec_ids, measure or EUCLIDEAN)


def explain(series: DeviationSeries, index: int, dist: DistanceSpec):
    """Target and best-match values on the compared features (the side-by-side view).

    Returns ``(feature_names, target_values, match_values)``.
    """
    if series.windows is None:
        raise ScoringError("series has no windows attached")
    target, match = _explained_pair(series, index)
    names = select_top_features(target, match, dist)
    t = np.column_stack([target.column(n) for n in names])
    m = np.column_stack([match.column(n) for n in names])
    return names, t, m


def _explained_pair(series, index):
    if series.best_match[index] < 0:
        raise ScoringError("window has no preceding match to explain")
    target = series.windows[index]
    # rebuild the match from its timestamp so merged series work too
    origin = int(np.searchsorted(target.frame.timestamps, series.best_match_ts[index]))
    match = Window(target.frame, origin, target.length, target.columns, target.spec_id)
    return target, match


def write_explanation(series: DeviationSeries, index: int, dist: DistanceSpec, directory) -> tuple:
    names, t, m = explain(series, index, dist)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stamp = format_ns(series.timestamps[index]).replace(":", "")
    paths = (directory / f"{stamp}_target.csv", directory / f"{stamp}_match.csv")
    for path, win, vals in zip(paths, _explained_pair(series, index), (t, m)):
        ts = win.frame.timestamps[win.origin:win.stop]
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "timestamp", *names])
            for step, (stamp_ns, row) in enumerate(zip(ts, vals)):
                w.writerow([step, format_ns(stamp_ns), *(format_score(v) for v in row)])
    return paths
