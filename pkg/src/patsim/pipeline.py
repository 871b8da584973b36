"""Pipeline stages shared by the CLI and the tuning objective.

Each stage takes plain inputs plus the config mapping and returns plain
outputs, so running the stages one by one is the same as running them all.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import alerting, deviation, evaluation, modes
from .config import get_path
from .distances import DistanceSpec
from .ingest import (Normalizer, TimeSeriesFrame, load_csv, load_events, parse_timestamp,
                     resample_linear)
from .smoothing import SmoothingConfig, smooth
from .windowing import WindowSpec, slice_windows

logger = logging.getLogger(__name__)


class DataError(ValueError):
    pass


# -- builders ------------------------------------------------------------------

def read_importance(path) -> dict:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] and rows[0][0].strip().lower() in ("feature", "name"):
        rows = rows[1:]
    return {r[0].strip(): float(r[1]) for r in rows if len(r) >= 2 and r[0].strip()}


def read_mask(path) -> tuple:
    """Interval CSV (start,end) -> tuple of closed nanosecond intervals."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        return tuple((parse_timestamp(r[0]), parse_timestamp(r[1])) for r in reader if r)


def distance_spec(cfg: dict) -> DistanceSpec:
    d = cfg["distance"]
    importance = read_importance(d["importance_path"]) if d["importance_path"] else None
    return DistanceSpec(
        measure=d["measure"], offset_step=d["offset_step"],
        slide_aggregation=d["slide_aggregation"],
        dimension_aggregation=d["dimension_aggregation"],
        top_k_features=d["top_k_features"], feature_relevance=d["feature_relevance"],
        importance=importance)


def window_specs(cfg: dict) -> list:
    w = cfg["windowing"]
    mask = read_mask(w["mask_path"]) if w["mask_path"] else None
    subset = tuple(w["feature_subset"]) if w["feature_subset"] else None
    specs = [WindowSpec(length=int(w["length"]), stride=int(w["stride"]),
                        history_depth=w["history_depth"], feature_subset=subset,
                        restriction_mask=mask, spec_id="w0")]
    for n, extra in enumerate(w["extra_specs"], start=1):
        specs.append(WindowSpec(length=int(extra["length"]), stride=int(extra.get("stride", w["stride"])),
                                history_depth=extra.get("history_depth", w["history_depth"]),
                                feature_subset=subset, restriction_mask=mask, spec_id=f"w{n}"))
    return specs


def voting_config(cfg: dict) -> alerting.VotingConfig:
    a = cfg["alerting"]
    return alerting.VotingConfig(t_cutoff=float(a["t_cutoff"]), k=int(round(a["k"])),
                                 T_anom=float(a["T_anom"]), weighting=a["weighting"],
                                 min_votes=int(a["min_votes"]))


# -- stages ------------------------------------------------------------------

def load_frame(cfg: dict) -> TimeSeriesFrame:
    i = cfg["ingest"]
    if i["path"] is None:
        raise DataError("ingest.path is not set")
    frame = load_csv(i["path"], i["timestamp_column"], i["feature_columns"], i["missing"])
    if i["resample_period"] is not None:
        frame = resample_linear(frame, i["resample_period"])
    return frame


def load_events_for(cfg: dict) -> list:
    path = get_path(cfg, "ingest.events_path")
    return [] if path is None else load_events(path)


def prepare(frame: TimeSeriesFrame, cfg: dict) -> TimeSeriesFrame:
    """Normalize (frozen prefix statistics) and smooth."""
    topk = cfg["distance"]["top_k_features"]
    if topk is not None and topk > frame.n_features:
        raise DataError(f"distance.top_k_features={topk} exceeds feature count {frame.n_features}")
    if cfg["ingest"]["normalize"]:
        rows = max(1, int(len(frame) * cfg["ingest"]["normalize_prefix_fraction"]))
        frame = Normalizer.fit(frame, rows).transform(frame)
    sm = cfg["smoothing"]
    return smooth(frame, SmoothingConfig(int(sm["kernel_length"]), dict(sm["per_feature_overrides"])))


def score(frame: TimeSeriesFrame, cfg: dict) -> deviation.DeviationSeries:
    """Smoothed frame -> merged deviation series over all window specs."""
    dist = distance_spec(cfg)
    scorer = deviation.score_windows_pruned if cfg["deviation"]["pruned"] else deviation.score_windows
    per_spec = []
    for spec in window_specs(cfg):
        windows = slice_windows(frame, spec)
        if not windows:
            raise DataError(f"window spec {spec.spec_id} produced no windows")
        per_spec.append(scorer(windows, dist, spec.history_depth, workers=int(cfg["workers"])))
    return deviation.merge_spec_scores(per_spec, cfg["deviation"]["merge_policy"])


def alert_threshold(series: deviation.DeviationSeries, cfg: dict) -> float:
    a = cfg["alerting"]
    if a["threshold"] is not None:
        return float(a["threshold"])
    usable = series.scores[series.has_match]
    if usable.size == 0:
        usable = series.scores
    return float(np.quantile(usable, a["threshold_quantile"]))


def make_alerts(series: deviation.DeviationSeries, cfg: dict) -> list:
    return alerting.extract_alerts(series, alert_threshold(series, cfg), cfg["alerting"]["merge_gap"])


def seed_labels(alerts: list, events: list, cfg: dict) -> dict:
    a = cfg["alerting"]
    labels = {}
    if a["seed_from_events"]:
        labels.update(evaluation.seed_from_events(alerts, events, int(a["seed_from_events"]),
                                                  cfg["evaluation"]["lead"]))
    if a["seed_labels_path"]:
        labels.update(alerting.read_seed_labels(a["seed_labels_path"], alerts))
    return labels


@dataclass
class VoteOutcome:
    labeled: list
    emitted: list
    suppressed: list = field(default_factory=list)


def vote(alerts: list, labels: dict, cfg: dict) -> VoteOutcome:
    seed, rest = alerting.apply_seed(alerts, labels)
    labeled = alerting.bootstrap_labels(seed, rest, distance_spec(cfg), voting_config(cfg))
    suppressed = []
    emitted = alerting.filter_alerts(labeled, suppressed)
    return VoteOutcome(labeled, emitted, suppressed)


def sweep_thresholds(series: deviation.DeviationSeries, cfg: dict) -> list:
    given = cfg["evaluation"]["thresholds"]
    if given:
        return sorted(float(t) for t in given)
    finite = series.scores[np.isfinite(series.scores)]
    if finite.size == 0:
        return [float(series.scores.max())]
    return sorted(set(np.quantile(finite, np.linspace(0, 1, cfg["evaluation"]["sweep_points"])).tolist()))


def attach_windows(series: deviation.DeviationSeries, frame: TimeSeriesFrame, cfg: dict):
    """Re-create the scored windows for a series read back from CSV."""
    lookup = {}
    for spec in window_specs(cfg):
        for w in slice_windows(frame, spec):
            lookup[(w.spec_id, w.start_ts)] = w
    try:
        series.windows = [lookup[(sid, int(t))] for sid, t in zip(series.spec_ids, series.timestamps)]
    except KeyError as exc:
        raise DataError(f"score file does not match the configured windows: {exc}") from None
    return series


def run_modes(frame: TimeSeriesFrame, cfg: dict) -> modes.ModeAssignment:
    m = cfg["modes"]
    spec = window_specs(cfg)[0]
    windows = slice_windows(frame, spec)
    book = modes.build_codebook(windows, distance_spec(cfg), float(m["radius"]))
    freqs = modes.word_frequencies(windows, book, m["block"])
    k = min(int(m["k"]), len(freqs))
    return modes.cluster_modes(freqs, k, int(cfg["seed"]))
