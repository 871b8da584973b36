"""Recall / false-alert objective and Gaussian-process Bayesian optimization over it."""
from __future__ import annotations

import copy
import csv
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

from . import pipeline
from .config import ConfigError, get_path, set_path
from .evaluation import evaluate

logger = logging.getLogger(__name__)

NOISE = 1e-6
N_CANDIDATES = 2048
LENGTH_SCALE_GRID = (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
EI_XI = 0.01


class TuningError(ValueError):
    pass


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str
    lo: float
    hi: float
    target: str | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "integer"):
            raise TuningError(f"{self.name}: kind must be continuous or integer")
        if not self.lo < self.hi:
            raise TuningError(f"{self.name}: lo must be < hi")

    # integers get equal-width cells in the unit interval
    @property
    def _span(self):
        if self.kind == "integer":
            return self.lo - 0.5, self.hi + 0.5
        return self.lo, self.hi

    def from_unit(self, u: float):
        a, b = self._span
        x = a + u * (b - a)
        if self.kind == "integer":
            return int(min(max(round(x), self.lo), self.hi))
        return float(min(max(x, self.lo), self.hi))

    def to_unit(self, x) -> float:
        a, b = self._span
        return (float(x) - a) / (b - a)


@dataclass
class TuningSpace:
    dimensions: list
    budget: int = 25
    seed: int = 0

    def __post_init__(self):
        if not self.dimensions:
            raise TuningError("tuning space has no dimensions")
        if len(self.dimensions) > 3:
            raise TuningError("optimize at most 3 parameters at once")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise TuningError(f"duplicate dimension names {names}")

    @property
    def names(self) -> list:
        return [d.name for d in self.dimensions]

    def decode(self, u: np.ndarray) -> dict:
        return {d.name: d.from_unit(x) for d, x in zip(self.dimensions, u)}

    def encode(self, params: dict) -> np.ndarray:
        return np.array([d.to_unit(params[d.name]) for d in self.dimensions])

    @classmethod
    def from_config(cls, cfg: dict) -> "TuningSpace":
        t = cfg["tuning"]
        dims = [Dimension(d["name"], d["kind"], d["lo"], d["hi"], d["target"]) for d in t["dimensions"]]
        return cls(dims, int(t["budget"]), int(cfg["seed"]))


@dataclass(frozen=True)
class ObjectiveValue:
    """``value = event_recall / max(false_alert_rate, 1 / (alerts + 1))``."""

    value: float
    at_threshold: float | None = None
    event_recall: float = 0.0
    false_alert_rate: float | None = None
    diagnostic: str | None = None


def _as_value(v) -> ObjectiveValue:
    return v if isinstance(v, ObjectiveValue) else ObjectiveValue(float(v))


def objective_from_alerts(emitted: Sequence, events: Sequence, lead=0) -> ObjectiveValue:
    """Best recall / false-alert ratio over alert decision criteria.

    The criterion keeps alerts whose peak score is at least ``c``; every
    distinct peak score is tried. Ties keep the lowest criterion. The rate
    floor ``1 / (alerts + 1)`` uses the emitted alert count, the same for
    every criterion, so a false-alert-free criterion beats any criterion with
    a false alert at equal recall.
    """
    if not emitted or not events:
        return ObjectiveValue(0.0, None, 0.0, None, "no alerts" if not emitted else "no events")
    floor = 1.0 / (len(emitted) + 1)
    best = None
    for c in sorted({a.peak_score for a in emitted}):
        kept = [a for a in emitted if a.peak_score >= c]
        rep = evaluate(kept, events, lead)
        recall = rep.event_recall or 0.0
        fpr = rep.alert_fpr
        value = recall / max(fpr, floor)
        if best is None or value > best.value:
            best = ObjectiveValue(float(value), float(c), float(recall), float(fpr))
    return best


@dataclass
class TuningData:
    """Inputs for the objective: raw frame and/or precomputed alerts, plus events.

    With ``alerts`` given only the voting stage reruns; otherwise the whole
    pipeline runs from ``frame``. ``seed_labels`` maps alert id -> label and
    defaults to the config's seeding policy.
    """

    events: list
    frame: object = None
    alerts: list | None = None
    seed_labels: dict | None = None
    _cache: dict = field(default_factory=dict, repr=False)


def apply_params(cfg: dict, params: dict) -> dict:
    """Copy of ``cfg`` with ``{dotted.key: value}`` applied."""
    out = copy.deepcopy(cfg)
    for key, value in params.items():
        set_path(out, key, value)
    return out


_SCORE_SECTIONS = ("ingest", "smoothing", "windowing", "distance", "deviation")


def run_alert_stage(data: TuningData, cfg: dict) -> list:
    if data.alerts is not None:
        return list(data.alerts)
    key = json.dumps({s: cfg[s] for s in _SCORE_SECTIONS}, sort_keys=True, default=str)
    series = data._cache.get(key)
    if series is None:
        series = pipeline.score(pipeline.prepare(data.frame, cfg), cfg)
        data._cache[key] = series
    return pipeline.make_alerts(series, cfg)


def objective(params: dict, data: TuningData, cfg: dict) -> ObjectiveValue:
    """Run the pipeline under ``params`` (dotted config keys) and score it.

    Pipeline failures give value 0 with a diagnostic instead of raising.
    """
    try:
        run_cfg = apply_params(cfg, params)
        alerts = run_alert_stage(data, run_cfg)
        labels = data.seed_labels
        if labels is None:
            labels = pipeline.seed_labels(alerts, data.events, run_cfg)
        outcome = pipeline.vote(alerts, labels, run_cfg)
        return objective_from_alerts(outcome.emitted, data.events, run_cfg["evaluation"]["lead"])
    except (ValueError, ConfigError, ArithmeticError) as exc:
        logger.warning("objective failed at %s: %s", params, exc)
        return ObjectiveValue(0.0, diagnostic=f"{type(exc).__name__}: {exc}")


class PipelineObjective:
    """Evaluator over a :class:`TuningSpace`: dimension names map to config targets."""

    def __init__(self, space: TuningSpace, data: TuningData, cfg: dict):
        for d in space.dimensions:
            if d.target is None:
                raise TuningError(f"dimension {d.name} has no config target")
            get_path(cfg, d.target)
        self.space, self.data, self.cfg = space, data, cfg

    def __call__(self, params: dict) -> ObjectiveValue:
        bound = {d.target: params[d.name] for d in self.space.dimensions}
        return objective(bound, self.data, self.cfg)


# -- Gaussian process ----------------------------------------------------------

def _se_kernel(a: np.ndarray, b: np.ndarray, scales: np.ndarray) -> np.ndarray:
    diff = (a[:, None, :] - b[None, :, :]) / scales
    return np.exp(-0.5 * (diff ** 2).sum(axis=2))


def _factor(K):
    jitter = 0.0
    for _ in range(6):
        try:
            return cho_factor(K + jitter * np.eye(K.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            jitter = 1e-8 if jitter == 0.0 else jitter * 100
    raise TuningError("GP covariance is not positive definite")


class GaussianProcess:
    """Zero-mean GP with a unit-variance squared-exponential kernel on standardized targets."""

    def __init__(self, length_scales, noise: float = NOISE):
        self.scales = np.asarray(length_scales, dtype=np.float64)
        self.noise = noise

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GaussianProcess":
        self.X = X
        self.mu = float(y.mean())
        sd = float(y.std())
        self.sd = sd if sd > 0 else 1.0
        self.z = (y - self.mu) / self.sd
        K = _se_kernel(X, X, self.scales) + self.noise * np.eye(X.shape[0])
        self.cf = _factor(K)
        self.alpha = cho_solve(self.cf, self.z)
        return self

    def log_marginal_likelihood(self) -> float:
        L = self.cf[0]
        n = self.z.shape[0]
        return float(-0.5 * self.z @ self.alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi))

    def predict(self, Xs: np.ndarray) -> tuple:
        """Posterior mean and standard deviation in standardized units."""
        Ks = _se_kernel(Xs, self.X, self.scales)
        mean = Ks @ self.alpha
        v = cho_solve(self.cf, Ks.T)
        var = np.maximum(1.0 - np.einsum("ij,ji->i", Ks, v), 0.0)
        return mean, np.sqrt(var)


def fit_gp(X: np.ndarray, y: np.ndarray, grid=LENGTH_SCALE_GRID) -> GaussianProcess:
    """Pick per-dimension length scales from ``grid`` by marginal likelihood."""
    best, best_ll = None, -np.inf
    for scales in itertools.product(grid, repeat=X.shape[1]):
        gp = GaussianProcess(scales).fit(X, y)
        ll = gp.log_marginal_likelihood()
        if ll > best_ll:
            best, best_ll = gp, ll
    return best


def expected_improvement(mean, sd, best, xi=EI_XI):
    sd = np.maximum(sd, 1e-12)
    z = (mean - best - xi) / sd
    return (mean - best - xi) * norm.cdf(z) + sd * norm.pdf(z)


def _lhs(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    try:
        sampler = qmc.LatinHypercube(d=d, rng=rng)
    except TypeError:
        sampler = qmc.LatinHypercube(d=d, seed=rng)
    return sampler.random(n)


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    phase: str
    params: dict
    value: ObjectiveValue


@dataclass
class TuningResult:
    best_params: dict
    best_value: ObjectiveValue
    trace: list


def gp_optimize(space: TuningSpace, evaluator: Callable) -> TuningResult:
    """Bayesian optimization with a GP surrogate and expected improvement.

    A seeded Latin hypercube of ``max(4, 2 d)`` points starts the search; each
    later point maximizes EI over 2048 seeded uniform candidates. Integer
    dimensions are searched continuously and rounded before evaluation.
    """
    d = len(space.dimensions)
    if space.budget < d + 2:
        raise TuningError(f"budget {space.budget} < dimensions + 2")
    rng = np.random.default_rng(space.seed)
    n_init = min(max(4, 2 * d), space.budget)
    X, y, trace = [], [], []

    def run(u, phase):
        params = space.decode(u)
        val = _as_value(evaluator(params))
        X.append(space.encode(params))
        y.append(val.value)
        trace.append(TraceEntry(len(trace), phase, params, val))

    for u in _lhs(d, n_init, rng):
        run(u, "init")
    while len(trace) < space.budget:
        gp = fit_gp(np.array(X), np.array(y))
        cand = rng.random((N_CANDIDATES, d))
        mean, sd = gp.predict(cand)
        ei = expected_improvement(mean, sd, gp.z.max())
        run(cand[int(np.argmax(ei))], "ei")
    best = max(trace, key=lambda e: (e.value.value, -e.iteration))
    return TuningResult(best.params, best.value, trace)


def _grid_axis(dim: Dimension, count) -> list:
    if dim.kind == "integer":
        if count is None:
            return list(range(int(dim.lo), int(dim.hi) + 1))
        return sorted({int(round(x)) for x in np.linspace(dim.lo, dim.hi, int(count))})
    if count is None:
        raise TuningError(f"continuous dimension {dim.name} needs a grid resolution")
    return [float(x) for x in np.linspace(dim.lo, dim.hi, int(count))]


@dataclass
class GridResult:
    best_params: dict
    best_value: ObjectiveValue
    surface: list


def grid_search(space: TuningSpace, resolution: Sequence, evaluator: Callable,
                cap: int = 10000) -> GridResult:
    """Exhaustive evaluation on a per-dimension grid (``None`` = every integer)."""
    if len(resolution) != len(space.dimensions):
        raise TuningError("one resolution entry per dimension is required")
    axes = [_grid_axis(d, r) for d, r in zip(space.dimensions, resolution)]
    total = int(np.prod([len(a) for a in axes]))
    if total > cap:
        raise TuningError(f"grid of {total} points exceeds cap {cap}; use a coarser resolution")
    surface = []
    for combo in itertools.product(*axes):
        params = dict(zip(space.names, combo))
        surface.append((params, _as_value(evaluator(params))))
    best_params, best_value = max(surface, key=lambda s: s[1].value)
    return GridResult(best_params, best_value, surface)


# -- export --------------------------------------------------------------------

def _fmt(x):
    return "" if x is None else repr(x)


def write_trace_csv(result: TuningResult, space: TuningSpace, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "phase", *space.names, "value", "at_threshold",
                    "event_recall", "false_alert_rate"])
        for e in result.trace:
            v = e.value
            w.writerow([e.iteration, e.phase, *(_fmt(e.params[n]) for n in space.names),
                        _fmt(v.value), _fmt(v.at_threshold), _fmt(v.event_recall),
                        _fmt(v.false_alert_rate)])


def write_surface_csv(result: GridResult, space: TuningSpace, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*space.names, "value"])
        for params, v in result.surface:
            w.writerow([*(_fmt(params[n]) for n in space.names), _fmt(v.value)])


def overlay(space: TuningSpace, params: dict) -> dict:
    """Nested config fragment setting each dimension's target to ``params``."""
    out = {}
    for d in space.dimensions:
        node = out
        parts = d.target.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = params[d.name]
    return out


def write_overlay(space: TuningSpace, params: dict, path):
    Path(path).write_text(yaml.safe_dump(overlay(space, params), sort_keys=True), encoding="utf-8")
