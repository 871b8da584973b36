"""Loading, validation, resampling and event extraction for multivariate series.

Timestamps are held as integer nanoseconds since the epoch (UTC) so that grid
arithmetic during resampling is exact.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NS_PER_SECOND = 1_000_000_000

HUMAN_ANNOTATION = "human_annotation"
DERIVED_FROM_POINT_LABELS = "derived_from_point_labels"

MISSING_POLICIES = ("interpolate", "drop_row", "error")


class IngestError(ValueError):
    """Raised when input data violates the frame contract."""


@dataclass(frozen=True, eq=False)
class TimeSeriesFrame:
    """Timestamped k-dimensional numeric matrix.

    Parameters
    ----------
    timestamps : ndarray of int64
        Strictly increasing instants in nanoseconds since the epoch.
    values : ndarray of float64, shape (n, k)
    feature_names : tuple of str
        Unique column identifiers, ``len == k``.
    """

    timestamps: np.ndarray
    values: np.ndarray
    feature_names: tuple

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        names = tuple(str(n) for n in self.feature_names)
        if vals.ndim != 2 or vals.shape[0] != ts.shape[0]:
            raise IngestError(
                f"values shape {vals.shape} does not match {ts.shape[0]} timestamps")
        if vals.shape[1] != len(names):
            raise IngestError(
                f"{vals.shape[1]} value columns but {len(names)} feature names")
        if len(set(names)) != len(names):
            raise IngestError(f"feature names are not unique: {names}")
        if ts.size > 1:
            steps = np.diff(ts)
            if np.any(steps <= 0):
                i = int(np.argmax(steps <= 0)) + 1
                raise IngestError(
                    f"timestamps not strictly increasing at row {i} ({format_ns(ts[i])})")
        if not np.all(np.isfinite(vals)):
            raise IngestError("frame contains missing or non-finite values")
        ts.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return self.timestamps.shape[0]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_index(name)]

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None

    def select(self, names: Sequence[str]) -> "TimeSeriesFrame":
        idx = [self.feature_index(n) for n in names]
        return TimeSeriesFrame(self.timestamps, self.values[:, idx], tuple(names))

    def with_values(self, values: np.ndarray) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.timestamps, values, self.feature_names)

    def head(self, n: int) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.timestamps[:n], self.values[:n], self.feature_names)


@dataclass(frozen=True)
class EventInterval:
    """Closed ground-truth interval ``[start, end]`` in nanoseconds."""

    start: int
    end: int
    source: str = HUMAN_ANNOTATION

    def __post_init__(self):
        if self.start > self.end:
            raise IngestError(
                f"event start {format_ns(self.start)} after end {format_ns(self.end)}")
        if self.source not in (HUMAN_ANNOTATION, DERIVED_FROM_POINT_LABELS):
            raise IngestError(f"unknown event source {self.source!r}")

    def contains(self, t: int) -> bool:
        return self.start <= t <= self.end


# -- time handling -----------------------------------------------------------

def to_ns(value) -> int:
    """Convert seconds (number), ``timedelta`` or ``np.timedelta64`` to nanoseconds."""
    if isinstance(value, timedelta):
        return (value.days * 86_400 + value.seconds) * NS_PER_SECOND + value.microseconds * 1000
    if isinstance(value, np.timedelta64):
        return int(value.astype("timedelta64[ns]").astype(np.int64))
    return int(round(float(value) * NS_PER_SECOND))


def format_ns(t) -> str:
    """ISO-8601 UTC rendering of an epoch-nanosecond instant."""
    t = int(t)
    secs, rem = divmod(t, NS_PER_SECOND)
    dt = datetime.fromtimestamp(secs, tz=timezone.utc)
    text = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if rem:
        text += f".{rem:09d}".rstrip("0")
    return text + "Z"


def parse_timestamp(text: str) -> int:
    """Parse an ISO-8601 string or numeric epoch seconds into nanoseconds (UTC)."""
    s = text.strip()
    if not s:
        raise ValueError("empty timestamp")
    try:
        secs = float(s)
    except ValueError:
        pass
    else:
        if not math.isfinite(secs):
            raise ValueError(f"non-finite timestamp {s!r}")
        if "." not in s and "e" not in s.lower():
            return int(s) * NS_PER_SECOND
        whole, _, frac = s.partition(".")
        if "e" in s.lower():
            return int(round(secs * NS_PER_SECOND))
        frac = (frac + "000000000")[:9]
        sign = -1 if whole.startswith("-") else 1
        return int(whole) * NS_PER_SECOND + sign * int(frac)
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    # fromisoformat on 3.10 only accepts 0, 3 or 6 fractional digits
    frac_ns = 0
    head, dot, tail = s.partition(".")
    if dot:
        digits = ""
        for ch in tail:
            if not ch.isdigit():
                break
            digits += ch
        frac_ns = int((digits + "000000000")[:9])
        s = head + tail[len(digits):]
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    whole = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return to_ns(whole) + frac_ns


# -- loading -----------------------------------------------------------------

def load_csv(path, timestamp_column: str = "timestamp",
             feature_columns: Sequence[str] | None = None,
             missing: str = "error") -> TimeSeriesFrame:
    """Read a UTF-8 CSV with a header row into a :class:`TimeSeriesFrame`.

    Rows are sorted by timestamp. Row numbers in error messages are 1-based
    file lines (the header is line 1).

    Parameters
    ----------
    missing : {'interpolate', 'drop_row', 'error'}
        Policy for empty cells.
    """
    if missing not in MISSING_POLICIES:
        raise ValueError(f"missing policy must be one of {MISSING_POLICIES}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file, header row required") from None
        if timestamp_column not in header:
            raise IngestError(f"{path}: timestamp column {timestamp_column!r} not in header")
        if feature_columns is None:
            feature_columns = [h for h in header if h != timestamp_column]
        feature_columns = list(feature_columns)
        missing_cols = [c for c in feature_columns if c not in header]
        if missing_cols:
            raise IngestError(f"{path}: columns not found: {missing_cols}")
        if not feature_columns:
            raise IngestError(f"{path}: no feature columns")
        ts_i = header.index(timestamp_column)
        col_i = [header.index(c) for c in feature_columns]

        stamps, rows, lines = [], [], []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) < len(header):
                record = record + [""] * (len(header) - len(record))
            try:
                t = parse_timestamp(record[ts_i])
            except ValueError:
                raise IngestError(
                    f"{path}: row {lineno}: unparseable timestamp {record[ts_i]!r}") from None
            row = []
            for name, ci in zip(feature_columns, col_i):
                cell = record[ci].strip()
                if cell == "":
                    row.append(np.nan)
                    continue
                try:
                    row.append(float(cell))
                except ValueError:
                    raise IngestError(
                        f"{path}: row {lineno}, column {name!r}: non-numeric value {cell!r}"
                    ) from None
            stamps.append(t)
            rows.append(row)
            lines.append(lineno)

    if not rows:
        raise IngestError(f"{path}: no data rows")
    ts = np.asarray(stamps, dtype=np.int64)
    vals = np.asarray(rows, dtype=np.float64)
    order = np.argsort(ts, kind="stable")
    ts, vals = ts[order], vals[order]
    lines = [lines[i] for i in order]
    dup = np.flatnonzero(np.diff(ts) == 0)
    if dup.size:
        t = ts[dup[0]]
        raise IngestError(
            f"{path}: duplicate timestamp {format_ns(t)} (rows {lines[dup[0]]} and {lines[dup[0] + 1]})")

    holes = np.isnan(vals)
    if holes.any():
        if missing == "error":
            r, c = np.argwhere(holes)[0]
            raise IngestError(
                f"{path}: row {lines[r]}, column {feature_columns[c]!r}: missing value")
        if missing == "drop_row":
            keep = ~holes.any(axis=1)
            ts, vals = ts[keep], vals[keep]
            if not ts.size:
                raise IngestError(f"{path}: every row has a missing value")
        else:
            vals = _interpolate_missing(ts, vals, feature_columns)
    return TimeSeriesFrame(ts, vals, tuple(feature_columns))


def _interpolate_missing(ts, vals, names):
    vals = vals.copy()
    x = ts.astype(np.float64)
    for j in range(vals.shape[1]):
        col = vals[:, j]
        ok = ~np.isnan(col)
        if not ok.any():
            raise IngestError(f"column {names[j]!r} has no values to interpolate from")
        # edges take the nearest observation
        col[~ok] = np.interp(x[~ok], x[ok], col[ok])
    return vals


def save_csv(frame: TimeSeriesFrame, path, timestamp_column: str = "timestamp"):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([timestamp_column, *frame.feature_names])
        for t, row in zip(frame.timestamps, frame.values):
            w.writerow([format_ns(t), *(repr(float(v)) for v in row)])


# -- resampling --------------------------------------------------------------

def resample_linear(frame: TimeSeriesFrame, period) -> TimeSeriesFrame:
    """Resample onto a uniform grid by linear interpolation.

    The grid starts at the first instant and steps by ``period`` up to (never
    beyond) the last instant. Input instants lying on the grid keep their
    values exactly.
    """
    if len(frame) < 2:
        raise IngestError("resampling needs at least 2 rows; interpolation undefined")
    step = to_ns(period)
    if step <= 0:
        raise ValueError("period must be positive")
    t0, t1 = int(frame.timestamps[0]), int(frame.timestamps[-1])
    n = (t1 - t0) // step + 1
    grid = t0 + step * np.arange(n, dtype=np.int64)

    src = frame.timestamps
    # bracketing rows computed in integer space; only the fraction is float
    right = np.searchsorted(src, grid, side="left")
    exact = (right < len(src)) & (src[np.minimum(right, len(src) - 1)] == grid)
    right = np.clip(right, 1, len(src) - 1)
    left = right - 1
    num = (grid - src[left]).astype(np.float64)
    den = (src[right] - src[left]).astype(np.float64)
    frac = (num / den)[:, None]
    v = frame.values
    out = v[left] + frac * (v[right] - v[left])
    hit = np.flatnonzero(exact)
    if hit.size:
        out[hit] = v[np.searchsorted(src, grid[hit])]
    return TimeSeriesFrame(grid, out, frame.feature_names)


# -- events ------------------------------------------------------------------

def events_from_point_labels(labels: Sequence[int], timestamps: Sequence[int]) -> list:
    """One :class:`EventInterval` per maximal run of 1-labels."""
    labels = np.asarray(labels)
    timestamps = np.asarray(timestamps, dtype=np.int64)
    if labels.shape[0] != timestamps.shape[0]:
        raise IngestError(
            f"label count {labels.shape[0]} != timestamp count {timestamps.shape[0]}")
    on = labels.astype(bool).astype(np.int8)
    edges = np.diff(np.concatenate([[0], on, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [EventInterval(int(timestamps[s]), int(timestamps[e]), DERIVED_FROM_POINT_LABELS)
            for s, e in zip(starts, ends)]


def rasterize_events(events: Iterable[EventInterval], timestamps: Sequence[int]) -> np.ndarray:
    """Point labels (0/1) for ``timestamps`` given closed event intervals."""
    timestamps = np.asarray(timestamps, dtype=np.int64)
    out = np.zeros(timestamps.shape[0], dtype=np.int8)
    for ev in events:
        out[(timestamps >= ev.start) & (timestamps <= ev.end)] = 1
    return out


def validate_events(events: Sequence[EventInterval]) -> list:
    events = sorted(events, key=lambda e: (e.start, e.end))
    for a, b in zip(events, events[1:]):
        if b.start <= a.end:
            raise IngestError(
                f"events overlap: [{format_ns(a.start)}, {format_ns(a.end)}] and "
                f"[{format_ns(b.start)}, {format_ns(b.end)}]")
    return events


def load_events(path) -> list:
    """Read an event file: interval CSV (start,end) or point-label CSV (ts,label)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            return []
        body = [(i, r) for i, r in enumerate(reader, start=2) if r and any(c.strip() for c in r)]
    if header[:2] == ["start", "end"]:
        events = []
        for lineno, r in body:
            try:
                events.append(EventInterval(parse_timestamp(r[0]), parse_timestamp(r[1])))
            except (ValueError, IndexError) as exc:
                raise IngestError(f"{path}: row {lineno}: {exc}") from None
        return validate_events(events)
    if len(header) >= 2 and header[1] == "label":
        stamps, labels = [], []
        for lineno, r in body:
            try:
                stamps.append(parse_timestamp(r[0]))
                lab = int(float(r[1]))
            except (ValueError, IndexError):
                raise IngestError(f"{path}: row {lineno}: bad point label record {r!r}") from None
            if lab not in (0, 1):
                raise IngestError(f"{path}: row {lineno}: label must be 0 or 1, got {lab}")
            labels.append(lab)
        order = np.argsort(stamps, kind="stable")
        return events_from_point_labels(np.asarray(labels)[order], np.asarray(stamps)[order])
    raise IngestError(f"{path}: expected header 'start,end' or '<ts>,label', got {header}")


def save_events(events: Iterable[EventInterval], path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start", "end"])
        for ev in events:
            w.writerow([format_ns(ev.start), format_ns(ev.end)])


# -- normalization -----------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    """Per-feature z-scoring with statistics frozen from a training prefix."""

    feature_names: tuple
    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)

    @classmethod
    def fit(cls, frame: TimeSeriesFrame, prefix_rows: int | None = None) -> "Normalizer":
        rows = frame.values if prefix_rows is None else frame.values[:prefix_rows]
        if rows.shape[0] == 0:
            raise IngestError("normalizer training prefix is empty")
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        # constant features are centred but not scaled
        std = np.where(std > 0, std, 1.0)
        return cls(frame.feature_names, mean, std)

    def transform(self, frame: TimeSeriesFrame) -> TimeSeriesFrame:
        if frame.feature_names != self.feature_names:
            raise IngestError("normalizer fitted on different features")
        return frame.with_values((frame.values - self.mean) / self.std)
