"""Command line interface.

Every subcommand reads the same YAML config (``--config``), accepts
``--set section.key=value`` overrides and config overlays, and writes plain
CSV/JSON artifacts into the output directory. ``pipeline`` runs the stage
subcommands in order, so its artifacts equal those of the individual runs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import alerting, deviation, evaluation, modes, pipeline, tuning
from .config import ConfigError, build_config, dump_config, load_config
from .ingest import save_csv, save_events

logger = logging.getLogger("patsim")

SCORES = "scores.csv"
ALERTS = "alerts.jsonl"
LABELED = "labeled.jsonl"
REPORT = "eval.json"
CURVES = "curves.csv"

# one-to-one flag -> config key shortcuts
FLAG_KEYS = {
    "input": "ingest.path",
    "events": "ingest.events_path",
    "smooth_length": "smoothing.kernel_length",
    "window_length": "windowing.length",
    "stride": "windowing.stride",
    "history_depth": "windowing.history_depth",
    "mask_file": "windowing.mask_path",
    "distance": "distance.measure",
    "offset_step": "distance.offset_step",
    "top_k_features": "distance.top_k_features",
    "importance_file": "distance.importance_path",
    "threshold": "alerting.threshold",
    "output_dir": "output_dir",
    "seed": "seed",
    "workers": "workers",
}


def _resolve_config(args) -> dict:
    overrides = []
    for path in args.overlay or ():
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        overrides.extend(_flatten(data))
    for name, key in FLAG_KEYS.items():
        value = getattr(args, name, None)
        if value is not None:
            if name in ("input", "events", "mask_file", "importance_file", "output_dir"):
                value = str(Path(value).resolve())
            overrides.append((key, value))
    overrides.extend(args.set or ())
    if args.config:
        return load_config(args.config, overrides)
    return build_config(None, overrides)


def _flatten(d: dict, prefix: str = "") -> list:
    out = []
    for k, v in d.items():
        if isinstance(v, dict) and k != "per_feature_overrides":
            out.extend(_flatten(v, f"{prefix}{k}."))
        else:
            out.append((f"{prefix}{k}", v))
    return out


def _out(cfg: dict) -> Path:
    path = Path(cfg["output_dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _prepared(cfg: dict):
    return pipeline.prepare(pipeline.load_frame(cfg), cfg)


def _scores_with_windows(cfg: dict, out: Path, frame=None):
    series = deviation.read_scores_csv(out / SCORES, pipeline.distance_spec(cfg).measure)
    frame = frame if frame is not None else _prepared(cfg)
    return pipeline.attach_windows(series, frame, cfg)


# -- subcommands -------------------------------------------------------------

def cmd_score(cfg: dict) -> dict:
    out = _out(cfg)
    frame = _prepared(cfg)
    series = pipeline.score(frame, cfg)
    deviation.write_scores_csv(series, out / SCORES)
    dist = pipeline.distance_spec(cfg)
    top = int(cfg["deviation"]["explain_top"])
    if top:
        ranked = sorted((i for i in range(len(series)) if series.has_match[i]),
                        key=lambda i: (-series.scores[i], i))[:top]
        for i in ranked:
            deviation.write_explanation(series, i, dist, out / "explain")
    return {"windows": len(series), "scores": str(out / SCORES)}


def cmd_alerts(cfg: dict) -> dict:
    out = _out(cfg)
    series = _scores_with_windows(cfg, out)
    alerts = pipeline.make_alerts(series, cfg)
    alerting.write_registry(alerts, out / ALERTS)
    return {"alerts": len(alerts), "threshold": pipeline.alert_threshold(series, cfg)}


def cmd_vote(cfg: dict) -> dict:
    out = _out(cfg)
    series = _scores_with_windows(cfg, out)
    alerts = alerting.read_registry(out / ALERTS, series.windows)
    events = pipeline.load_events_for(cfg)
    outcome = pipeline.vote(alerts, pipeline.seed_labels(alerts, events, cfg), cfg)
    alerting.write_registry(outcome.labeled, out / LABELED)
    return {"labeled": len(outcome.labeled), "emitted": len(outcome.emitted),
            "suppressed": len(outcome.suppressed)}


def cmd_eval(cfg: dict) -> dict:
    out = _out(cfg)
    series = deviation.read_scores_csv(out / SCORES, pipeline.distance_spec(cfg).measure)
    events = pipeline.load_events_for(cfg)
    lead = cfg["evaluation"]["lead"]
    source = out / LABELED if (out / LABELED).exists() else out / ALERTS
    alerts = alerting.read_registry(source)
    emitted = [a for a in alerts if a.label is None or a.positive]
    report = evaluation.evaluate(emitted, events, lead)
    raw = evaluation.evaluate(alerts, events, lead)
    report.curves = evaluation.threshold_sweep(series, events, pipeline.sweep_thresholds(series, cfg),
                                               cfg["alerting"]["merge_gap"], lead)
    obj = tuning.objective_from_alerts(emitted, events, lead)
    report.extra = {
        "before_filtering": {k: v for k, v in raw.to_dict().items() if k not in ("curves", "extra")},
        "suppressed": len(alerts) - len(emitted),
        "objective": {"value": obj.value, "at_threshold": obj.at_threshold,
                      "event_recall": obj.event_recall, "false_alert_rate": obj.false_alert_rate},
    }
    report.write_json(out / REPORT)
    evaluation.write_curves_csv(report.curves, out / CURVES)
    return {"event_recall": report.event_recall, "alert_fpr": report.alert_fpr,
            "objective": obj.value}


def cmd_scatter(cfg: dict, a_path, b_path) -> dict:
    out = _out(cfg)
    a = deviation.read_scores_csv(a_path)
    b = deviation.read_scores_csv(b_path)
    result = evaluation.risk_scatter(a, b, pipeline.load_events_for(cfg))
    evaluation.write_scatter_csv(result, out / "scatter.csv")
    (out / "scatter_summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")
    return result.summary


def cmd_tune(cfg: dict, grid: bool = False) -> dict:
    out = _out(cfg)
    space = tuning.TuningSpace.from_config(cfg)
    data = tuning.TuningData(pipeline.load_events_for(cfg), frame=pipeline.load_frame(cfg))
    evaluator = tuning.PipelineObjective(space, data, cfg)
    result = tuning.gp_optimize(space, evaluator)
    tuning.write_trace_csv(result, space, out / "tune_trace.csv")
    tuning.write_overlay(space, result.best_params, out / "overlay.yaml")
    summary = {"best_params": result.best_params, "best_value": result.best_value.value,
               "event_recall": result.best_value.event_recall,
               "false_alert_rate": result.best_value.false_alert_rate,
               "evaluations": len(result.trace)}
    if grid:
        res = tuning.grid_search(space, cfg["tuning"]["grid_resolution"], evaluator,
                                 int(cfg["tuning"]["grid_cap"]))
        tuning.write_surface_csv(res, space, out / "tune_surface.csv")
        summary["grid_best_params"] = res.best_params
        summary["grid_best_value"] = res.best_value.value
    (out / "tune.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def cmd_modes(cfg: dict) -> dict:
    out = _out(cfg)
    assignment = pipeline.run_modes(_prepared(cfg), cfg)
    modes.write_modes_csv(assignment, out / "modes.csv")
    return {"blocks": len(assignment.blocks), "clusters": assignment.cluster_count}


def cmd_pipeline(cfg: dict) -> dict:
    summary = {"score": cmd_score(cfg), "alerts": cmd_alerts(cfg), "vote": cmd_vote(cfg),
               "eval": cmd_eval(cfg)}
    if cfg["modes"]["enabled"]:
        summary["modes"] = cmd_modes(cfg)
    dump_config(cfg, _out(cfg) / "resolved_config.yaml")
    return summary


def cmd_demo(directory) -> dict:
    """Write the bundled two-feature synthetic data set and a matching config."""
    from .synthetic import demo_frame
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frame, events = demo_frame()
    save_csv(frame, directory / "synthetic.csv")
    save_events(events, directory / "events.csv")
    cfg = {
        "config_version": 1,
        "output_dir": "out",
        "ingest": {"path": "synthetic.csv", "events_path": "events.csv"},
        "windowing": {"length": 30, "stride": 10},
        "distance": {"measure": "euclid"},
        "alerting": {"threshold_quantile": 0.9, "seed_from_events": 3, "t_cutoff": 0.3},
        "modes": {"enabled": True, "radius": 0.5, "block": 300, "k": 2},
    }
    (directory / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True), encoding="utf-8")
    return {"directory": str(directory)}


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--overlay", action="append", help="config overlay file (repeatable)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--input")
        p.add_argument("--events")
        p.add_argument("--output-dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--smooth-length", type=int)
        p.add_argument("--window-length", type=int)
        p.add_argument("--stride", type=int)
        p.add_argument("--history-depth", type=int)
        p.add_argument("--mask-file")
        p.add_argument("--distance", choices=("euclid", "dtw", "xcorr"))
        p.add_argument("--offset-step", type=int)
        p.add_argument("--top-k-features", type=int)
        p.add_argument("--importance-file")
        p.add_argument("--threshold", type=float)
        return p

    for name, help_ in (("score", "score windows into a deviation series"),
                        ("alerts", "threshold scores into an alert registry"),
                        ("vote", "propagate seed labels and filter alerts"),
                        ("eval", "evaluate alerts against events"),
                        ("modes", "word histogram and operating-mode clusters"),
                        ("pipeline", "run score, alerts, vote, eval (and modes) in order")):
        common(sub.add_parser(name, help=help_))
    p = common(sub.add_parser("tune", help="Bayesian optimization of config parameters"))
    p.add_argument("--grid", action="store_true", help="also run the grid-search surface")
    p = common(sub.add_parser("scatter", help="join two score files for a risk-vs-risk plot"))
    p.add_argument("score_a")
    p.add_argument("score_b")
    p = sub.add_parser("demo", help="write the bundled synthetic data set and config")
    p.add_argument("directory")
    return parser


def _fail(kind: str, message: str, code: int, key: str | None = None) -> int:
    record = {"error": kind, "message": message}
    if key is not None:
        record["key"] = key
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "demo":
        print(json.dumps(cmd_demo(args.directory), sort_keys=True))
        return 0
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        return _fail("config", exc.message, 2, exc.key)
    try:
        if args.command == "scatter":
            result = cmd_scatter(cfg, args.score_a, args.score_b)
        elif args.command == "tune":
            result = cmd_tune(cfg, args.grid)
        else:
            result = {"score": cmd_score, "alerts": cmd_alerts, "vote": cmd_vote, "eval": cmd_eval,
                      "modes": cmd_modes, "pipeline": cmd_pipeline}[args.command](cfg)
    except (ValueError, OSError, KeyError) as exc:
        return _fail("data", str(exc), 1)
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
