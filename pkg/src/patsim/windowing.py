"""Overlapping multivariate windows over a frame."""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import TimeSeriesFrame


@dataclass(frozen=True)
class WindowSpec:
    """How to cut a frame into windows.

    ``restriction_mask`` is a sequence of closed ``(start_ns, end_ns)``
    intervals; only windows lying entirely inside one of them are generated.
    """

    length: int
    stride: int = 1
    history_depth: int | None = None
    feature_subset: tuple | None = None
    restriction_mask: tuple | None = None
    allow_gaps: bool = False
    spec_id: str = "w0"

    def __post_init__(self):
        if self.length < 1 or self.stride < 1:
            raise ValueError("window length and stride must be positive")
        if self.stride > self.length and not self.allow_gaps:
            raise ValueError(
                f"stride {self.stride} > length {self.length} leaves gaps; set allow_gaps")
        if self.history_depth is not None and self.history_depth < 1:
            raise ValueError("history_depth must be >= 1")
        if self.feature_subset is not None:
            object.__setattr__(self, "feature_subset", tuple(self.feature_subset))
        if self.restriction_mask is not None:
            mask = tuple((int(a), int(b)) for a, b in self.restriction_mask)
            object.__setattr__(self, "restriction_mask", mask)


class Window:
    """A view of ``length`` consecutive rows of a frame on selected features.

    Values are materialized lazily, and only when the feature selection is
    not a contiguous column range.
    """

    __slots__ = ("frame", "origin", "length", "columns", "feature_names", "spec_id", "_values")

    def __init__(self, frame: TimeSeriesFrame, origin: int, length: int,
                 columns: Sequence[int] | None = None, spec_id: str = "w0"):
        self.frame = frame
        self.origin = int(origin)
        self.length = int(length)
        if columns is None:
            columns = range(frame.n_features)
        self.columns = tuple(int(c) for c in columns)
        self.feature_names = tuple(frame.feature_names[c] for c in self.columns)
        self.spec_id = spec_id
        self._values = None

    @property
    def stop(self) -> int:
        return self.origin + self.length

    @property
    def start_ts(self) -> int:
        return int(self.frame.timestamps[self.origin])

    @property
    def end_ts(self) -> int:
        return int(self.frame.timestamps[self.stop - 1])

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            rows = self.frame.values[self.origin:self.stop]
            cols = self.columns
            if cols == tuple(range(cols[0], cols[-1] + 1)):
                self._values = rows[:, cols[0]:cols[-1] + 1]
            else:
                self._values = rows[:, list(cols)]
        return self._values

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def __repr__(self):
        return f"Window(spec={self.spec_id!r}, origin={self.origin}, length={self.length})"


def slice_windows(frame: TimeSeriesFrame, spec: WindowSpec) -> list:
    """Windows at origins ``0, stride, 2*stride, ...`` that fit in the frame."""
    n = len(frame)
    if n < spec.length:
        raise ValueError(f"frame has {n} rows, shorter than window length {spec.length}")
    if spec.feature_subset is None:
        columns = list(range(frame.n_features))
    else:
        columns = [frame.feature_names.index(f) for f in spec.feature_subset
                   if f in frame.feature_names]
        if not columns:
            raise ValueError(
                f"feature_subset {spec.feature_subset} shares no features with the frame")
    origins = np.arange(0, n - spec.length + 1, spec.stride)
    if spec.restriction_mask is not None:
        ts = frame.timestamps
        starts, ends = ts[origins], ts[origins + spec.length - 1]
        keep = np.zeros(origins.shape[0], dtype=bool)
        for lo, hi in spec.restriction_mask:
            keep |= (starts >= lo) & (ends <= hi)
        origins = origins[keep]
    return [Window(frame, o, spec.length, columns, spec.spec_id) for o in origins]


def preceding_windows(target: Window, windows: Sequence[Window],
                      history_depth: int | None = None) -> list:
    """Windows ending strictly before ``target`` begins, most recent last.

    ``windows`` must be sorted by origin. At most ``history_depth`` of the
    latest qualifying windows are returned.
    """
    # windows starting at or after the target can never qualify
    hi = bisect_right([w.origin for w in windows], target.origin - 1)
    out = [w for w in windows[:hi] if w.stop <= target.origin]
    if history_depth is not None:
        out = out[-history_depth:] if history_depth > 0 else []
    return out


def predecessor_range(index: int, origins: np.ndarray, stops: np.ndarray,
                      history_depth: int | None = None) -> np.ndarray:
    """Indices of predecessors of ``windows[index]`` given origin/stop arrays.

    Equivalent to :func:`preceding_windows` but index-based, for scoring loops.
    """
    origin = origins[index]
    cand = np.flatnonzero(stops[:index] <= origin)
    if history_depth is not None:
        cand = cand[-history_depth:]
    return cand
