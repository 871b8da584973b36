import dataclasses

import numpy as np
import pytest
import yaml

from patsim.alerting import Alert
from patsim.config import build_config
from patsim.ingest import NS_PER_SECOND, EventInterval
from patsim.synthetic import alert_scenario, spiked_frame
from patsim.tuning import (Dimension, GaussianProcess, ObjectiveValue, PipelineObjective,
                           TuningData, TuningError, TuningSpace, expected_improvement, fit_gp,
                           gp_optimize, grid_search, objective, objective_from_alerts, overlay,
                           write_overlay, write_surface_csv, write_trace_csv)

S = NS_PER_SECOND


def alert(i, lo, hi, peak):
    return Alert(f"A{i:05d}", lo * S, hi * S, float(peak))


def ev(lo, hi):
    return EventInterval(lo * S, hi * S)


class TestObjective:
    def test_zero_recall(self):
        v = objective_from_alerts([alert(0, 50, 51, 3.0)], [ev(0, 1)])
        assert v.value == 0.0

    def test_separable_hits_fpr_floor(self):
        alerts = [alert(0, 0, 1, 5.0), alert(1, 10, 11, 1.0), alert(2, 20, 21, 6.0)]
        v = objective_from_alerts(alerts, [ev(0, 2), ev(19, 22)])
        # criterion 5.0 keeps both true alerts: recall 1, fpr 0, floor 1/(3+1)
        assert v.at_threshold == 5.0
        assert v.value == 4.0 and v.event_recall == 1.0 and v.false_alert_rate == 0.0

    def test_lowest_criterion_on_ties(self):
        alerts = [alert(0, 0, 1, 2.0), alert(1, 5, 6, 3.0)]
        v = objective_from_alerts(alerts, [ev(0, 1)])
        # c=2: recall 1, fpr 0.5 -> 2; c=3: recall 0 -> 0
        assert v.at_threshold == 2.0 and v.value == 2.0

    def test_empty(self):
        assert objective_from_alerts([], [ev(0, 1)]).value == 0.0
        assert objective_from_alerts([alert(0, 0, 1, 1)], []).value == 0.0

    def test_scale_invariance_of_argmax(self):
        r = np.random.default_rng(3)
        alerts = [alert(i, 10 * i, 10 * i + 3, p) for i, p in enumerate(r.random(12))]
        events = [ev(10 * i, 10 * i + 1) for i in (1, 4, 7, 8)]
        base = objective_from_alerts(alerts, events)
        for c in (0.01, 3.0, 1e4):
            scaled = [dataclasses.replace(a, peak_score=a.peak_score * c) for a in alerts]
            v = objective_from_alerts(scaled, events)
            assert (v.event_recall, v.false_alert_rate, v.value) == (
                base.event_recall, base.false_alert_rate, base.value)

    def test_pipeline_failure_is_zero_with_diagnostic(self):
        frame, event = spiked_frame(300, (200, 240))
        cfg = build_config({"windowing": {"length": 20, "stride": 5}, "distance": {"measure": "euclid"}})
        v = objective({"windowing.length": 1000}, TuningData([event], frame=frame), cfg)
        assert v.value == 0.0 and v.diagnostic

    def test_matches_independent_rerun(self):
        frame, event = spiked_frame(600, (400, 460))
        cfg = build_config({"windowing": {"length": 20, "stride": 5},
                            "distance": {"measure": "euclid"},
                            "alerting": {"seed_from_events": 2}})
        params = {"alerting.T_anom": 0.3, "alerting.k": 2}
        cached = TuningData([event], frame=frame)
        objective(params, cached, cfg)
        a = objective(params, cached, cfg)
        b = objective(params, TuningData([event], frame=frame), cfg)
        assert a == b and a.value > 0


class TestGp:
    def test_interpolates(self):
        X = np.array([[0.1], [0.5], [0.9]])
        y = np.array([1.0, 3.0, 2.0])
        gp = GaussianProcess([0.2]).fit(X, y)
        mean, sd = gp.predict(X)
        np.testing.assert_allclose(mean * gp.sd + gp.mu, y, atol=1e-4)
        assert np.all(sd < 1e-2)

    def test_length_scale_selection(self):
        X = np.linspace(0, 1, 8)[:, None]
        y = np.sin(2 * np.pi * X[:, 0])
        gp = fit_gp(X, y)
        assert gp.scales[0] in (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
        assert gp.log_marginal_likelihood() >= GaussianProcess([1.6]).fit(X, y).log_marginal_likelihood()

    def test_ei_nonnegative(self):
        ei = expected_improvement(np.array([-1.0, 0.0, 2.0]), np.array([0.1, 0.0, 1.0]), 0.5)
        assert np.all(ei >= 0) and ei[2] > ei[0]


def quadratic(params):
    x = params["x"]
    return -(x - 0.62) ** 2


class TestOptimize:
    def space(self, budget=15, seed=0):
        return TuningSpace([Dimension("x", "continuous", -2.0, 3.0)], budget, seed)

    def test_quadratic_argmax(self):
        res = gp_optimize(self.space(), quadratic)
        assert abs(res.best_params["x"] - 0.62) <= 0.05 * 5.0
        assert len(res.trace) == 15

    def test_constant(self):
        res = gp_optimize(self.space(10), lambda p: 1.0)
        assert len(res.trace) == 10 and res.best_value.value == 1.0

    def test_not_worse_than_initial_design(self):
        for seed in range(5):
            res = gp_optimize(self.space(12, seed), quadratic)
            init = [e.value.value for e in res.trace if e.phase == "init"]
            assert res.best_value.value >= max(init)

    def test_bit_reproducible(self, tmp_path):
        space = TuningSpace([Dimension("x", "continuous", 0, 1), Dimension("k", "integer", 1, 6)], 14, 7)

        def f(p):
            return np.sin(5 * p["x"]) + 0.1 * p["k"]

        write_trace_csv(gp_optimize(space, f), space, tmp_path / "a.csv")
        write_trace_csv(gp_optimize(space, f), space, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_integer_rounding(self):
        space = TuningSpace([Dimension("k", "integer", 1, 4)], 8, 0)
        seen = []
        gp_optimize(space, lambda p: seen.append(p["k"]) or 0.0)
        assert all(isinstance(k, int) and 1 <= k <= 4 for k in seen)

    def test_budget_too_small(self):
        with pytest.raises(TuningError):
            gp_optimize(self.space(2), quadratic)

    def test_too_many_dimensions(self):
        with pytest.raises(TuningError):
            TuningSpace([Dimension(n, "continuous", 0, 1) for n in "abcd"])


class TestGrid:
    def test_one_point(self):
        space = TuningSpace([Dimension("x", "continuous", 0, 1)])
        res = grid_search(space, [1], quadratic)
        assert res.best_params == {"x": 0.0} and len(res.surface) == 1

    def test_surface_max(self, tmp_path):
        space = TuningSpace([Dimension("x", "continuous", -1, 1), Dimension("k", "integer", 1, 3)])
        res = grid_search(space, [11, None], lambda p: quadratic(p) + p["k"])
        assert len(res.surface) == 33
        assert all(res.best_value.value >= v.value for _, v in res.surface)
        write_surface_csv(res, space, tmp_path / "s.csv")
        assert len((tmp_path / "s.csv").read_text().splitlines()) == 34

    def test_cap(self):
        space = TuningSpace([Dimension("x", "continuous", 0, 1)])
        with pytest.raises(TuningError, match="coarser"):
            grid_search(space, [50], quadratic, cap=10)

    def test_gp_incumbent_on_surface(self):
        sc = alert_scenario()
        cfg = build_config({"distance": {"measure": "euclid"}})
        data = TuningData(sc.events, alerts=sc.alerts, seed_labels=sc.seed_labels)
        space = TuningSpace.from_config(cfg)
        space.budget = 10
        ev = PipelineObjective(space, data, cfg)
        res = gp_optimize(space, ev)
        assert ev(res.best_params) == res.best_value


def test_overlay(tmp_path):
    space = TuningSpace([Dimension("T", "continuous", 0, 1, "alerting.T_anom"),
                         Dimension("k", "integer", 1, 5, "alerting.k")])
    assert overlay(space, {"T": 0.25, "k": 2}) == {"alerting": {"T_anom": 0.25, "k": 2}}
    write_overlay(space, {"T": 0.25, "k": 2}, tmp_path / "o.yaml")
    assert yaml.safe_load((tmp_path / "o.yaml").read_text()) == {"alerting": {"T_anom": 0.25, "k": 2}}


def test_objective_value_defaults():
    assert ObjectiveValue(0.0).diagnostic is None
