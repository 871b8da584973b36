"""Alert extraction, majority-vote label propagation and false-alert filtering."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .deviation import DeviationSeries
from .distances import DistanceSpec, distance
from .ingest import format_ns, parse_timestamp, to_ns

TRUE_POSITIVE = "true_positive"
FALSE_POSITIVE = "false_positive"
LABELS = (TRUE_POSITIVE, FALSE_POSITIVE)

HUMAN = "human"
PROPAGATED = "propagated"
DEFAULT_POSITIVE = "default_positive"

WEIGHT_EPS = 1e-6


class AlertError(ValueError):
    pass


@dataclass(frozen=True)
class Vote:
    alert_id: str
    distance: float
    label: str
    weight: float


@dataclass(frozen=True)
class Alert:
    """A flagged time interval ``[start, end]`` (nanoseconds).

    ``representative`` is the member window with the peak score; alert to
    alert comparisons use it. ``windows`` holds member indices into the
    scored window list.
    """

    id: str
    start: int
    end: int
    peak_score: float
    windows: tuple = ()
    representative: object = field(default=None, repr=False, compare=False)
    label: str | None = None
    label_source: str | None = None
    vote_record: tuple | None = None
    vote_mean: float | None = None

    def __post_init__(self):
        if self.start > self.end:
            raise AlertError(f"alert {self.id}: empty interval")
        if self.label is not None and self.label not in LABELS:
            raise AlertError(f"alert {self.id}: unknown label {self.label!r}")
        if self.label_source == PROPAGATED and self.vote_record is None:
            raise AlertError(f"alert {self.id}: propagated label without a vote record")

    @property
    def is_labeled(self) -> bool:
        return self.label is not None

    @property
    def positive(self) -> bool:
        return self.label == TRUE_POSITIVE

    def with_label(self, label: str, source: str = HUMAN) -> "Alert":
        return replace(self, label=label, label_source=source)


@dataclass(frozen=True)
class VotingConfig:
    t_cutoff: float = 0.5
    k: int = 3
    T_anom: float = 0.5
    weighting: str = "uniform"
    min_votes: int = 1

    def __post_init__(self):
        if not (self.k >= self.min_votes >= 1):
            raise AlertError(f"need k >= min_votes >= 1, got k={self.k}, min_votes={self.min_votes}")
        if not (0.0 <= self.T_anom <= 1.0):
            raise AlertError(f"T_anom must lie in [0, 1], got {self.T_anom}")
        if self.weighting not in ("uniform", "similarity_weighted"):
            raise AlertError(f"unknown weighting {self.weighting!r}")


# -- extraction --------------------------------------------------------------

def extract_alerts(scores: DeviationSeries, threshold: float, merge_gap=0) -> list:
    """Threshold a score series into alerts.

    Maximal runs of entries scoring at or above ``threshold`` become alerts
    spanning from the first member's start to the last member's window end.
    Alerts separated by less than ``merge_gap`` (seconds or timedelta) merge.
    """
    gap = to_ns(merge_gap)
    hot = np.asarray(scores.scores) >= threshold
    edges = np.diff(np.concatenate([[0], hot.astype(np.int8), [0]]))
    runs = list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))
    merged = []
    for lo, hi in runs:
        start = int(scores.timestamps[lo])
        end = int(scores.end_timestamps[lo:hi].max())
        if merged and start - merged[-1][3] < gap:
            prev = merged[-1]
            merged[-1] = (prev[0], hi, prev[2], max(prev[3], end))
        else:
            merged.append((lo, hi, start, end))
    alerts = []
    for n, (lo, hi, start, end) in enumerate(merged):
        members = [i for i in range(lo, hi) if hot[i]]
        peak_i = max(members, key=lambda i: (scores.scores[i], -i))
        rep = scores.windows[peak_i] if scores.windows is not None else None
        alerts.append(Alert(id=f"A{n:05d}", start=start, end=end,
                            peak_score=float(scores.scores[peak_i]),
                            windows=tuple(members), representative=rep))
    return alerts


# -- voting ------------------------------------------------------------------

@dataclass(frozen=True)
class VoteResult:
    label: str
    label_source: str
    vote_record: tuple
    vote_mean: float | None


def alert_distance(a: Alert, b: Alert, dist: DistanceSpec) -> float:
    if a.representative is None or b.representative is None:
        raise AlertError(f"alerts {a.id}/{b.id} lack representative windows")
    return distance(a.representative, b.representative, dist)


def vote_label(new_alert: Alert, registry: Sequence[Alert], dist: DistanceSpec,
               config: VotingConfig) -> VoteResult:
    """Label ``new_alert`` by majority vote of its most similar labeled predecessors.

    Past alerts within ``t_cutoff`` are candidates; the ``k`` closest vote
    (ties by registry order). Fewer than ``min_votes`` voters means the alert
    is novel and is labeled positive by default.
    """
    for past in registry:
        if not past.is_labeled:
            raise AlertError(f"registry alert {past.id} is unlabeled; labels must precede use")
        if past.start >= new_alert.start:
            raise AlertError(f"registry alert {past.id} does not precede {new_alert.id}")
    scored = [(alert_distance(new_alert, past, dist), n, past) for n, past in enumerate(registry)]
    candidates = sorted((s for s in scored if s[0] <= config.t_cutoff), key=lambda s: (s[0], s[1]))
    voters = candidates[:config.k]
    record = []
    for d, _, past in voters:
        if config.weighting == "similarity_weighted":
            w = 1.0 / (WEIGHT_EPS + d - dist.floor)
        else:
            w = 1.0
        record.append(Vote(past.id, float(d), past.label, w))
    record = tuple(record)
    if len(voters) < config.min_votes:
        return VoteResult(TRUE_POSITIVE, DEFAULT_POSITIVE, record, None)
    total = sum(v.weight for v in record)
    mean = sum(v.weight * (v.label == TRUE_POSITIVE) for v in record) / total
    label = TRUE_POSITIVE if mean >= config.T_anom else FALSE_POSITIVE
    return VoteResult(label, PROPAGATED, record, float(mean))


def bootstrap_labels(seed: Sequence[Alert], unlabeled: Sequence[Alert], dist: DistanceSpec,
                     config: VotingConfig) -> list:
    """Label alerts in time order, each voting against everything labeled before it.

    Seed alerts join the registry once they precede the alert being labeled,
    so seeds may interleave with the unlabeled stream.
    """
    for a in seed:
        if not a.is_labeled:
            raise AlertError(f"seed alert {a.id} is unlabeled")
    for a, b in zip(unlabeled, unlabeled[1:]):
        if b.start < a.start:
            raise AlertError(f"unlabeled alerts out of time order: {a.id} then {b.id}")
    labeled = sorted(seed, key=lambda a: a.start)
    for alert in unlabeled:
        registry = [a for a in labeled if a.start < alert.start]
        res = vote_label(alert, registry, dist, config)
        labeled.append(replace(alert, label=res.label, label_source=res.label_source,
                               vote_record=res.vote_record, vote_mean=res.vote_mean))
    return sorted(labeled, key=lambda a: (a.start, a.id))


def filter_alerts(labeled: Sequence[Alert], suppression_log: list | None = None) -> list:
    """Drop alerts labeled false positive from the emitted stream.

    Suppressed alerts are appended to ``suppression_log`` when one is given.
    """
    out = []
    for a in labeled:
        if not a.is_labeled:
            raise AlertError(f"alert {a.id} is unlabeled")
        if a.positive:
            out.append(a)
        elif suppression_log is not None:
            suppression_log.append(a)
    return out


# -- persistence -------------------------------------------------------------

def alert_to_record(a: Alert) -> dict:
    rep = a.representative
    return {
        "id": a.id,
        "interval": [format_ns(a.start), format_ns(a.end)],
        "peak_score": a.peak_score,
        "windows": list(a.windows),
        "representative": None if rep is None else {"spec_id": rep.spec_id, "origin": rep.origin},
        "label": a.label,
        "label_source": a.label_source,
        "vote_mean": a.vote_mean,
        "vote_record": None if a.vote_record is None else [
            {"alert_id": v.alert_id, "distance": v.distance, "label": v.label, "weight": v.weight}
            for v in a.vote_record],
    }


def write_registry(alerts: Sequence[Alert], path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for a in alerts:
            fh.write(json.dumps(alert_to_record(a), sort_keys=True) + "\n")


def read_registry(path, windows: Sequence | None = None) -> list:
    """Load a JSONL registry; representatives are re-attached from ``windows``."""
    lookup = {} if windows is None else {(w.spec_id, w.origin): w for w in windows}
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                rep = r.get("representative")
                votes = r.get("vote_record")
                out.append(Alert(
                    id=r["id"],
                    start=parse_timestamp(r["interval"][0]),
                    end=parse_timestamp(r["interval"][1]),
                    peak_score=float(r["peak_score"]),
                    windows=tuple(r.get("windows", ())),
                    representative=None if rep is None else lookup.get((rep["spec_id"], rep["origin"])),
                    label=r.get("label"),
                    label_source=r.get("label_source"),
                    vote_record=None if votes is None else tuple(Vote(**v) for v in votes),
                    vote_mean=r.get("vote_mean"),
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise AlertError(f"{path}: line {lineno}: bad alert record ({exc})") from None
    return out


def _parse_label(text: str) -> str:
    t = text.strip().lower()
    if t in ("1", "true", "true_positive", "tp", "positive"):
        return TRUE_POSITIVE
    if t in ("0", "false", "false_positive", "fp", "negative"):
        return FALSE_POSITIVE
    raise AlertError(f"unrecognized label {text!r}")


def read_seed_labels(path, alerts: Sequence[Alert]) -> dict:
    """Map alert id -> label from a two-column CSV (alert id or ``start/end``, label)."""
    by_id = {a.id: a for a in alerts}
    by_interval = {(a.start, a.end): a for a in alerts}
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            key = row[0].strip()
            if key in by_id:
                alert = by_id[key]
            elif "/" in key:
                lo, hi = key.split("/", 1)
                alert = by_interval.get((parse_timestamp(lo), parse_timestamp(hi)))
                if alert is None:
                    raise AlertError(f"{path}: row {lineno}: no alert with interval {key}")
            else:
                raise AlertError(f"{path}: row {lineno}: unknown alert {key!r}")
            out[alert.id] = _parse_label(row[1])
    return out


def apply_seed(alerts: Sequence[Alert], seed_labels: dict) -> tuple:
    """Split alerts into (human-labeled seed, unlabeled remainder)."""
    seed, rest = [], []
    for a in alerts:
        if a.id in seed_labels:
            seed.append(a.with_label(seed_labels[a.id], HUMAN))
        else:
            rest.append(a)
    return seed, rest
