"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math
import shutil
import time
from pathlib import Path

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from patsim.alerting import VotingConfig, apply_seed, bootstrap_labels, filter_alerts
from patsim.cli import main
from patsim.deviation import brute_force_scores, score_windows, score_windows_pruned
from patsim.distances import DTW, EUCLIDEAN, XCORR, DistanceSpec, distance
from patsim.evaluation import evaluate, risk_scatter, step_align
from patsim.modes import build_codebook, cluster_modes, word_frequencies
from patsim.smoothing import SmoothingConfig, smooth
from patsim.synthetic import (alert_scenario, planted_events_frame, spiked_frame,
                              two_regime_frame)
from patsim.tuning import (Dimension, PipelineObjective, TuningData, TuningSpace, gp_optimize,
                           grid_search)
from patsim.windowing import WindowSpec, slice_windows

from conftest import make_frame, report

EU = DistanceSpec(measure=EUCLIDEAN)


def random_case(rng, max_windows=50, max_features=4):
    k = int(rng.integers(1, max_features + 1))
    length = int(rng.integers(2, 9))
    stride = int(rng.integers(1, length + 1))
    n_windows = int(rng.integers(1, max_windows + 1))
    rows = length + (n_windows - 1) * stride
    values = rng.standard_normal((rows, k)) * rng.uniform(0.1, 3.0, k)
    if rng.random() < 0.3:
        # repeated segments create exact ties
        values = np.tile(values[: max(length, rows // 3)], (4, 1))[:rows]
    ws = slice_windows(make_frame(values), WindowSpec(length, stride))
    depth = None if rng.random() < 0.5 else int(rng.integers(1, 6))
    return ws, depth


def test_criterion_1_scoring_oracle():
    rng = np.random.default_rng(101)
    xcorr_fft = DistanceSpec(measure=XCORR, xcorr_method="fft")
    start = time.perf_counter()
    worst_xcorr, bad = 0.0, []
    for case in range(200):
        ws, depth = random_case(rng)
        for measure in (EUCLIDEAN, DTW):
            dist = DistanceSpec(measure=measure)
            s = score_windows(ws, dist, depth)
            scores, match = brute_force_scores(ws, dist, depth)
            if not (np.array_equal(s.scores.view(np.int64), scores.view(np.int64))
                    and np.array_equal(s.best_match, match)):
                bad.append((case, measure))
        dist = DistanceSpec(measure=XCORR)
        s = score_windows(ws, dist, depth)
        scores, _ = brute_force_scores(ws, dist, depth, kernel=lambda a, b: distance(a, b, xcorr_fft))
        worst_xcorr = max(worst_xcorr, float(np.max(np.abs(s.scores - scores))))
    elapsed = time.perf_counter() - start
    ok = not bad and worst_xcorr <= 1e-9 and elapsed < 60
    assert report(1, ok, f"200 frames, bitwise mismatches={len(bad)}, "
                         f"max xcorr |diff|={worst_xcorr:.2e} (tol 1e-9), {elapsed:.1f}s (< 60s)")


def test_criterion_2_pruned_equals_naive():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    mismatches, naive_ops, pruned_ops = 0, 0, 0
    for _ in range(1000):
        ws, depth = random_case(rng)
        dist = DistanceSpec(measure=EUCLIDEAN,
                            dimension_aggregation=str(rng.choice(["mean", "max"])))
        a = score_windows(ws, dist, depth)
        b = score_windows_pruned(ws, dist, depth)
        mismatches += not a.same_scores(b)
        naive_ops += a.ops
        pruned_ops += b.ops
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 120
    assert report(2, ok, f"1000 frames, mismatches={mismatches}, ops pruned/naive="
                         f"{pruned_ops}/{naive_ops}, {elapsed:.1f}s (< 120s)")


def slide_by_enumeration(short, long_):
    m = short.shape[0]
    best = math.inf
    for off in range(long_.shape[0] - m + 1):
        seg = long_[off:off + m]
        per_dim = [math.sqrt(np.sum((short[:, d] - seg[:, d]) ** 2) / m) for d in range(short.shape[1])]
        best = min(best, float(np.mean(per_dim)))
    return best


def test_criterion_3_kernel_suite():
    rng = np.random.default_rng(303)
    specs = {m: DistanceSpec(measure=m) for m in (EUCLIDEAN, DTW, XCORR)}
    failures = {name: 0 for name in ("symmetry", "identity", "dtw_bound", "xcorr_range",
                                     "xcorr_shift", "slide_enum")}
    pairs = 600
    for _ in range(pairs):
        k = int(rng.integers(1, 4))
        n = int(rng.integers(1, 33))
        m = int(rng.integers(1, 33))
        a = rng.standard_normal((n, k))
        b = rng.standard_normal((n, k))
        c = rng.standard_normal((m, k))
        for spec in specs.values():
            if abs(distance(a, b, spec) - distance(b, a, spec)) > 1e-9:
                failures["symmetry"] += 1
        if (distance(a, a, specs[EUCLIDEAN]) != 0.0 or distance(a, a, specs[DTW]) != 0.0
                or abs(distance(a, a, specs[XCORR]) + 1.0) > 1e-12):
            failures["identity"] += 1
        if distance(a, b, specs[DTW]) > distance(a, b, specs[EUCLIDEAN]) * math.sqrt(n) + 1e-12:
            failures["dtw_bound"] += 1
        if not -1.0 <= distance(a, c, specs[XCORR]) <= 1.0:
            failures["xcorr_range"] += 1
        pad = np.vstack([np.zeros((int(rng.integers(0, 6)), k)), c, np.zeros((int(rng.integers(0, 6)), k))])
        if distance(a, pad, specs[XCORR]) > distance(a, c, specs[XCORR]) + 1e-12:
            failures["xcorr_shift"] += 1
        short, long_ = (a, c) if n <= m else (c, a)
        got = distance(short, long_, specs[EUCLIDEAN])
        if abs(got - slide_by_enumeration(short, long_)) > 1e-12 * max(1.0, got):
            failures["slide_enum"] += 1
    ok = not any(failures.values())
    assert report(3, ok, f"{pairs} random pairs (len <= 32), failures={failures}")


def test_criterion_4_rise_inside_anomaly():
    start = time.perf_counter()
    frame, event = spiked_frame()
    ws = slice_windows(smooth(frame, SmoothingConfig(11)), WindowSpec(20, 5))
    s = score_windows(ws, EU)
    usable = np.flatnonzero(s.has_match)
    top = usable[np.argmax(s.scores[usable])]
    inside = bool(event.start <= s.timestamps[top] <= event.end)
    pre = s.scores[usable][s.timestamps[usable] < event.start]
    ratio = float(np.median(pre) / s.scores[top])
    elapsed = time.perf_counter() - start
    ok = inside and ratio < 0.25 and elapsed < 10
    assert report(4, ok, f"peak inside interval={inside}, pre-interval median/peak={ratio:.4f} "
                         f"(< 0.25), {elapsed:.2f}s")


def test_criterion_5_voting_removes_false_alerts():
    start = time.perf_counter()
    sc = alert_scenario()
    before = evaluate(sc.alerts, sc.events)
    seed, rest = apply_seed(sc.alerts, sc.seed_labels)
    emitted = filter_alerts(bootstrap_labels(seed, rest, EU, VotingConfig(t_cutoff=0.5, k=3)))
    after = evaluate(emitted, sc.events)
    elapsed = time.perf_counter() - start
    reduction = 1 - after.alerts_false / before.alerts_false
    ok = reduction >= 0.5 and after.event_recall == 1.0 and elapsed < 10
    assert report(5, ok, f"false alerts {before.alerts_false} -> {after.alerts_false} "
                         f"(reduction {reduction:.0%}, need >= 50%), recall {after.event_recall}, "
                         f"{elapsed:.2f}s")


def test_criterion_6_in_event_percentiles():
    start = time.perf_counter()
    frame, events = planted_events_frame()
    ws = slice_windows(smooth(frame, SmoothingConfig(11)), WindowSpec(20, 5))
    aligned = step_align(score_windows(ws, EU), frame.timestamps)
    summary = risk_scatter(aligned, aligned, events).summary
    frac = summary["a_in_event_upper_half"]
    elapsed = time.perf_counter() - start
    ok = frac >= 0.8 and elapsed < 10
    assert report(6, ok, f"{summary['in_event_points']} in-event timestamps, "
                         f"{frac:.1%} in upper half (>= 80%), {elapsed:.2f}s")


def test_criterion_7_gp_matches_grid(tmp_path):
    start = time.perf_counter()
    sc = alert_scenario()
    cfg = {"evaluation": {"lead": 0}, "alerting": {"t_cutoff": 0.5, "k": 3, "T_anom": 0.5,
                                                   "weighting": "uniform", "min_votes": 1},
           "distance": {"measure": "euclid", "offset_step": 1, "slide_aggregation": "min",
                        "dimension_aggregation": "mean", "top_k_features": None,
                        "feature_relevance": "target_window_variance", "importance_path": None}}
    space = TuningSpace([Dimension("T_anom", "continuous", 0.0, 1.0, "alerting.T_anom"),
                         Dimension("k", "integer", 1, 10, "alerting.k")], budget=25, seed=0)

    def evaluator():
        data = TuningData(sc.events, alerts=sc.alerts, seed_labels=sc.seed_labels)
        return PipelineObjective(space, data, cfg)

    grid = grid_search(space, [20, None], evaluator())
    runs = [gp_optimize(space, evaluator()) for _ in range(2)]
    traces = [[(e.params, e.value.value) for e in r.trace] for r in runs]
    reproducible = traces[0] == traces[1]
    ratio = runs[0].best_value.value / grid.best_value.value
    elapsed = time.perf_counter() - start
    ok = ratio >= 0.95 and reproducible and elapsed < 300
    assert report(7, ok, f"gp best {runs[0].best_value.value:.4g} vs grid max "
                         f"{grid.best_value.value:.4g} over {len(grid.surface)} points "
                         f"(ratio {ratio:.3f} >= 0.95), traces identical={reproducible}, "
                         f"{elapsed:.1f}s")


def test_criterion_8_modes_recovery():
    start = time.perf_counter()
    frame, regime = two_regime_frame()
    ws = slice_windows(frame, WindowSpec(20, 10))
    book = build_codebook(ws, EU, 0.5)
    blocks = word_frequencies(ws, book, 100)
    res = cluster_modes(blocks, 2, seed=0)
    t0, step = int(frame.timestamps[0]), int(frame.timestamps[1] - frame.timestamps[0])
    truth = []
    for b in blocks:
        rows = regime[(b.start - t0) // step:(b.end - t0) // step]
        truth.append(int(np.bincount(rows).argmax()))
    ari = adjusted_rand_score(truth, res.labels)
    elapsed = time.perf_counter() - start
    ok = ari >= 0.9 and elapsed < 30
    assert report(8, ok, f"{len(blocks)} blocks, {len(book)} words, adjusted Rand {ari:.3f} "
                         f"(>= 0.9), {elapsed:.2f}s")


def test_criterion_9_pipeline_determinism(tmp_path):
    demo = tmp_path / "demo"
    assert main(["demo", str(demo)]) == 0
    args = ["pipeline", "--config", str(demo / "config.yaml")]

    def snapshot():
        out = demo / "out"
        return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}

    assert main(args) == 0
    first = snapshot()
    shutil.rmtree(demo / "out")
    assert main(args) == 0
    second = snapshot()
    ok = first == second and len(first) > 5
    assert report(9, ok, f"two pipeline runs, {len(first)} artifacts, byte-identical={first == second}")
