"""Event recall, alert true/false positive rates, threshold sweeps and risk scatter data."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .alerting import FALSE_POSITIVE, TRUE_POSITIVE, Alert, extract_alerts
from .deviation import DeviationSeries
from .ingest import EventInterval, format_ns, to_ns


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    event_recall: float | None
    alert_fpr: float | None
    alert_tpr: float | None
    n_alerts: int = 0


@dataclass
class EvalReport:
    """Alert-count based quality summary.

    Rates with an empty denominator are ``None`` (not applicable).
    """

    event_recall: float | None
    alert_tpr: float | None
    alert_fpr: float | None
    events_total: int
    events_recalled: int
    alerts_total: int
    alerts_true: int
    alerts_false: int
    curves: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["curves"] = [asdict(p) for p in self.curves]
        return d

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def overlaps(alert: Alert, event: EventInterval, lead: int = 0) -> bool:
    """Closed-interval overlap of an alert with ``[event.start - lead, event.end]``."""
    return alert.start <= event.end and alert.end >= event.start - lead


def _ratio(num, den):
    return None if den == 0 else num / den


def evaluate(alerts: Sequence[Alert], events: Sequence[EventInterval], lead=0) -> EvalReport:
    """Score alerts against ground-truth events.

    An event is recalled when any alert overlaps it (extended backwards by
    ``lead``); an alert is true when it overlaps any extended event. One alert
    may recall several events.
    """
    lead_ns = to_ns(lead)
    recalled = sum(1 for ev in events if any(overlaps(a, ev, lead_ns) for a in alerts))
    true = sum(1 for a in alerts if any(overlaps(a, ev, lead_ns) for ev in events))
    n = len(alerts)
    return EvalReport(
        event_recall=_ratio(recalled, len(events)),
        alert_tpr=_ratio(true, n),
        alert_fpr=_ratio(n - true, n),
        events_total=len(events),
        events_recalled=recalled,
        alerts_total=n,
        alerts_true=true,
        alerts_false=n - true,
    )


def threshold_sweep(scores: DeviationSeries, events: Sequence[EventInterval],
                    thresholds: Sequence[float], merge_gap=0, lead=0) -> list:
    """Extract and evaluate alerts at each threshold (ascending)."""
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValueError("threshold list is empty")
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    out = []
    for t in thresholds:
        rep = evaluate(extract_alerts(scores, t, merge_gap), events, lead)
        out.append(SweepPoint(t, rep.event_recall, rep.alert_fpr, rep.alert_tpr, rep.alerts_total))
    return out


def write_curves_csv(points: Sequence[SweepPoint], path):
    def fmt(x):
        return "" if x is None else repr(float(x))

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "event_recall", "alert_fpr", "alert_tpr", "n_alerts"])
        for p in points:
            w.writerow([fmt(p.threshold), fmt(p.event_recall), fmt(p.alert_fpr),
                        fmt(p.alert_tpr), p.n_alerts])


def seed_from_events(alerts: Sequence[Alert], events: Sequence[EventInterval], count: int,
                     lead=0) -> dict:
    """Simulated annotator: label the first ``count`` alerts by event overlap."""
    lead_ns = to_ns(lead)
    out = {}
    for a in sorted(alerts, key=lambda a: a.start)[:count]:
        hit = any(overlaps(a, ev, lead_ns) for ev in events)
        out[a.id] = TRUE_POSITIVE if hit else FALSE_POSITIVE
    return out


# -- risk vs. risk -------------------------------------------------------------

@dataclass(frozen=True)
class ScatterRecord:
    timestamp: int
    score_a: float
    score_b: float
    in_event: bool
    percentile_a: float
    percentile_b: float


@dataclass
class ScatterResult:
    records: list
    summary: dict


def _as_pair(series):
    if isinstance(series, DeviationSeries):
        return np.asarray(series.timestamps), np.asarray(series.scores, dtype=np.float64)
    ts, vals = series
    return np.asarray(ts, dtype=np.int64), np.asarray(vals, dtype=np.float64)


def weak_percentiles(values: np.ndarray) -> np.ndarray:
    """Percent of ``values`` less than or equal to each entry."""
    ranked = np.sort(values)
    return 100.0 * np.searchsorted(ranked, values, side="right") / values.shape[0]


def step_align(series, timestamps) -> tuple:
    """Hold each score until the next one and read it off at ``timestamps``.

    Instants before the first score are dropped. Returns ``(timestamps, values)``.
    """
    ts, vals = _as_pair(series)
    timestamps = np.asarray(timestamps, dtype=np.int64)
    timestamps = timestamps[timestamps >= ts[0]]
    return timestamps, vals[np.searchsorted(ts, timestamps, side="right") - 1]


def risk_scatter(series_a, series_b, events: Sequence[EventInterval]) -> ScatterResult:
    """Join two score sequences on their common span for a risk-vs-risk comparison.

    Each series is step-aligned (a value holds until the next one) onto the
    union of timestamps inside the common span. Records carry the weak
    percentile of each score within its own joined distribution.
    """
    ta, va = _as_pair(series_a)
    tb, vb = _as_pair(series_b)
    if ta.size == 0 or tb.size == 0:
        raise ValueError("empty score sequence")
    lo, hi = max(ta[0], tb[0]), min(ta[-1], tb[-1])
    if lo > hi:
        raise ValueError("score sequences cover disjoint time spans")
    grid = np.union1d(ta, tb)
    grid = grid[(grid >= lo) & (grid <= hi)]
    a = va[np.searchsorted(ta, grid, side="right") - 1]
    b = vb[np.searchsorted(tb, grid, side="right") - 1]
    flags = np.zeros(grid.shape[0], dtype=bool)
    for ev in events:
        flags |= (grid >= ev.start) & (grid <= ev.end)
    pa, pb = weak_percentiles(a), weak_percentiles(b)
    records = [ScatterRecord(int(t), float(x), float(y), bool(f), float(p), float(q))
               for t, x, y, f, p, q in zip(grid, a, b, flags, pa, pb)]
    n_in = int(flags.sum())
    summary = {
        "points": int(grid.shape[0]),
        "in_event_points": n_in,
        "a_in_event_upper_half": None if n_in == 0 else float(np.mean(pa[flags] > 50.0)),
        "b_in_event_upper_half": None if n_in == 0 else float(np.mean(pb[flags] > 50.0)),
        "a_in_event_median_percentile": None if n_in == 0 else float(np.median(pa[flags])),
        "b_in_event_median_percentile": None if n_in == 0 else float(np.median(pb[flags])),
    }
    return ScatterResult(records, summary)


def write_scatter_csv(result: ScatterResult, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "score_a", "score_b", "in_event", "percentile_a", "percentile_b"])
        for r in result.records:
            w.writerow([format_ns(r.timestamp), repr(r.score_a), repr(r.score_b), int(r.in_event),
                        repr(r.percentile_a), repr(r.percentile_b)])
