"""Deterministic synthetic data sets used by the tests, the acceptance suite and the demo."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alerting import FALSE_POSITIVE, TRUE_POSITIVE, Alert
from .ingest import NS_PER_SECOND, EventInterval, TimeSeriesFrame
from .windowing import Window

EPOCH = 1_600_000_000 * NS_PER_SECOND


def seconds(n: int, start: int = EPOCH, step_s: float = 1.0) -> np.ndarray:
    return start + (np.arange(n) * step_s * NS_PER_SECOND).astype(np.int64)


def periodic_frame(n: int = 1200, period: float = 50.0, noise: float = 0.02, seed: int = 0,
                   names=("a", "b")) -> TimeSeriesFrame:
    """Two phase-shifted sinusoids plus Gaussian noise, one row per second."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    cols = [np.sin(2 * np.pi * t / period + i * np.pi / 3) + noise * rng.standard_normal(n)
            for i in range(len(names))]
    return TimeSeriesFrame(seconds(n), np.column_stack(cols), names)


def _inject(values: np.ndarray, lo: int, hi: int, kind: str, rng, gain: float = 1.0) -> None:
    m = hi - lo
    s = np.arange(m)
    k = values.shape[1]
    if kind == "growing":
        ramp = gain * np.linspace(1.0, 4.0, m)
        for j in range(k):
            values[lo:hi, j] = ramp * np.sin(2 * np.pi * s / 13.0 + j)
    elif kind == "burst":
        values[lo:hi] += 2.0 * rng.standard_normal((m, k))
    elif kind == "shift":
        values[lo:hi] += np.linspace(2.0, 4.0, m)[:, None]
    elif kind == "chirp":
        phase = 2 * np.pi * (s / 30.0 + s ** 2 / 400.0)
        for j in range(k):
            values[lo:hi, j] = 2.5 * np.sin(phase + j)
    elif kind == "square":
        for j in range(k):
            values[lo:hi, j] = 3.0 * np.sign(np.sin(2 * np.pi * s / 9.0 + j) + 1e-9) - 1.0
    else:
        raise ValueError(f"unknown anomaly kind {kind!r}")


def spiked_frame(n: int = 1200, interval=(800, 880), noise: float = 0.02, seed: int = 0):
    """Periodic frame with one anomalous interval of growing, faster oscillation.

    Returns ``(frame, event)`` with the event covering the injected rows.
    """
    frame = periodic_frame(n, noise=noise, seed=seed)
    vals = frame.values.copy()
    lo, hi = interval
    # strong enough to stand above the start-up artifact of short history
    _inject(vals, lo, hi, "growing", np.random.default_rng(seed + 1), gain=2.0)
    frame = frame.with_values(vals)
    ev = EventInterval(int(frame.timestamps[lo]), int(frame.timestamps[hi - 1]))
    return frame, ev


PLANTED_KINDS = ("burst", "shift", "chirp", "square", "growing")


def planted_events_frame(n: int = 2400, event_length: int = 60, noise: float = 0.02, seed: int = 3):
    """Periodic frame with five distinct anomalies spread over the second 80%.

    Returns ``(frame, events)``.
    """
    rng = np.random.default_rng(seed)
    frame = periodic_frame(n, noise=noise, seed=seed)
    vals = frame.values.copy()
    starts = np.linspace(0.25 * n, 0.9 * n, len(PLANTED_KINDS)).astype(int)
    events = []
    for lo, kind in zip(starts, PLANTED_KINDS):
        hi = lo + event_length
        _inject(vals, lo, hi, kind, rng)
        events.append(EventInterval(int(frame.timestamps[lo]), int(frame.timestamps[hi - 1])))
    return frame.with_values(vals), events


def two_regime_frame(n_segments: int = 8, segment: int = 300, noise: float = 0.03, seed: int = 5):
    """Alternating regimes: slow sinusoid (0) and fast sawtooth (1).

    Returns ``(frame, regime_per_row)``.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(segment)
    parts, regime = [], []
    for s in range(n_segments):
        if s % 2 == 0:
            block = np.column_stack([np.sin(2 * np.pi * t / 20.0), np.cos(2 * np.pi * t / 20.0)])
        else:
            saw = 2.0 * ((t % 10) / 10.0) - 1.0
            block = np.column_stack([saw, -saw])
        parts.append(block + noise * rng.standard_normal(block.shape))
        regime.extend([s % 2] * segment)
    vals = np.vstack(parts)
    return TimeSeriesFrame(seconds(vals.shape[0]), vals, ("a", "b")), np.array(regime)


@dataclass
class AlertScenario:
    frame: TimeSeriesFrame
    alerts: list
    events: list
    seed_labels: dict
    is_event_alert: np.ndarray


def alert_scenario(n_event: int = 10, n_spurious: int = 10, span: int = 40, gap: int = 20,
                   noise: float = 0.05, seed: int = 11) -> AlertScenario:
    """Twenty interleaved alerts: event alerts with distinct shapes, spurious ones alike.

    Spurious alerts share one glitch shape (a short square pulse) plus noise.
    Each event alert has its own waveform and overlaps its own event. The
    first two spurious alerts are seeded false and the first event alert is
    seeded true.
    """
    rng = np.random.default_rng(seed)
    n = n_event + n_spurious
    kinds = np.array([i % 2 == 1 for i in range(n)])  # odd slots are events
    rows = n * (span + gap) + gap
    base = noise * rng.standard_normal((rows, 2))
    s = np.arange(span)
    alerts, events = [], []
    frame_ts = seconds(rows)
    ev_count = 0
    for i in range(n):
        lo = gap + i * (span + gap)
        if kinds[i]:
            freq = 3.0 + 1.7 * ev_count
            amp = 1.0 + 0.4 * ev_count
            base[lo:lo + span, 0] += amp * np.sin(2 * np.pi * s / freq)
            base[lo:lo + span, 1] += amp * np.cos(2 * np.pi * s / (freq + 2.0)) + 0.3 * ev_count
            ev_count += 1
        else:
            pulse = np.where((s >= 10) & (s < 30), 1.5, 0.0)
            base[lo:lo + span, 0] += pulse
            base[lo:lo + span, 1] -= pulse
    frame = TimeSeriesFrame(frame_ts, base, ("a", "b"))
    seed_labels = {}
    seen_spurious = 0
    first_event = True
    for i in range(n):
        lo = gap + i * (span + gap)
        rep = Window(frame, lo, span)
        alert = Alert(id=f"A{i:05d}", start=int(frame_ts[lo]), end=int(frame_ts[lo + span - 1]),
                      peak_score=float(1.0 + (i % 5) * 0.1), windows=(i,), representative=rep)
        alerts.append(alert)
        if kinds[i]:
            events.append(EventInterval(alert.start, alert.end))
            if first_event:
                seed_labels[alert.id] = TRUE_POSITIVE
                first_event = False
        elif seen_spurious < 2:
            seed_labels[alert.id] = FALSE_POSITIVE
            seen_spurious += 1
    return AlertScenario(frame, alerts, events, seed_labels, kinds)


def demo_frame(n: int = 1800, seed: int = 7):
    """The bundled two-feature demo: periodic signal with three planted events."""
    rng = np.random.default_rng(seed)
    frame = periodic_frame(n, period=60.0, noise=0.03, seed=seed)
    vals = frame.values.copy()
    events = []
    for lo, kind in zip((700, 1150, 1550), ("burst", "chirp", "shift")):
        hi = lo + 60
        _inject(vals, lo, hi, kind, rng)
        events.append(EventInterval(int(frame.timestamps[lo]), int(frame.timestamps[hi - 1])))
    return frame.with_values(vals), events
