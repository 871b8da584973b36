import csv
import json
import shutil
from pathlib import Path

import pytest
import yaml

from patsim.cli import main

FILES = ("scores.csv", "alerts.jsonl", "labeled.jsonl", "eval.json", "curves.csv")


@pytest.fixture
def demo(tmp_path):
    assert main(["demo", str(tmp_path / "demo")]) == 0
    return tmp_path / "demo"


def run(demo, *args, out="out"):
    return main([args[0], "--config", str(demo / "config.yaml"), "--output-dir", str(demo / out),
                 *args[1:]])


def snapshot(directory):
    return {str(p.relative_to(directory)): p.read_bytes()
            for p in sorted(Path(directory).rglob("*")) if p.is_file()}


def test_score_one_row_per_window(demo):
    assert run(demo, "score") == 0
    with (demo / "out" / "scores.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    # 1800 rows, window 30, stride 10
    assert len(rows) == (1800 - 30) // 10 + 1
    assert rows[0]["best_match_timestamp"] == "" and rows[0]["score"] == "inf"
    assert len(list((demo / "out" / "explain").glob("*_target.csv"))) == 3


def test_pipeline_equals_composition(demo):
    assert run(demo, "pipeline", out="whole") == 0
    for cmd in ("score", "alerts", "vote", "eval", "modes"):
        assert run(demo, cmd, out="parts") == 0
    whole, parts = snapshot(demo / "whole"), snapshot(demo / "parts")
    whole.pop("resolved_config.yaml")
    assert whole == parts


def test_pipeline_deterministic(demo):
    assert run(demo, "pipeline") == 0
    first = snapshot(demo / "out")
    shutil.rmtree(demo / "out")
    assert run(demo, "pipeline") == 0
    assert snapshot(demo / "out") == first


def test_threshold_above_all_scores(demo):
    assert run(demo, "pipeline", "--threshold", "1e300") == 0
    report = json.loads((demo / "out" / "eval.json").read_text())
    assert report["alerts_total"] == 0 and report["event_recall"] == 0.0
    assert report["alert_fpr"] is None


def test_tune_overlay_round_trip(demo):
    assert run(demo, "tune", "--set", "tuning.budget=8") == 0
    tuned = json.loads((demo / "out" / "tune.json").read_text())
    assert run(demo, "pipeline", "--overlay", str(demo / "out" / "overlay.yaml"), out="tuned") == 0
    report = json.loads((demo / "tuned" / "eval.json").read_text())
    assert report["extra"]["objective"]["value"] == tuned["best_value"]
    overlay = yaml.safe_load((demo / "out" / "overlay.yaml").read_text())
    resolved = yaml.safe_load((demo / "tuned" / "resolved_config.yaml").read_text())
    assert resolved["alerting"]["k"] == overlay["alerting"]["k"]


def test_tune_grid_surface(demo):
    assert run(demo, "tune", "--grid", "--set", "tuning.budget=6",
               "--set", "tuning.grid_resolution=[3, 2]") == 0
    lines = (demo / "out" / "tune_surface.csv").read_text().splitlines()
    assert lines[0] == "T_anom,k,value" and len(lines) == 7


def test_scatter(demo):
    assert run(demo, "score") == 0
    scores = str(demo / "out" / "scores.csv")
    assert run(demo, "scatter", scores, scores) == 0
    summary = json.loads((demo / "out" / "scatter_summary.json").read_text())
    assert summary["in_event_points"] > 0


def test_flags_map_to_config(demo):
    assert run(demo, "score", "--distance", "dtw", "--window-length", "20", "--stride", "20") == 0
    with (demo / "out" / "scores.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 90


def test_config_error_exit_2(demo, capsys):
    assert run(demo, "score", "--set", "windowing.stride=0") == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err == {"error": "config", "key": "windowing.stride", "message": "must be a positive integer"}


def test_data_error_exit_1(demo, capsys):
    assert run(demo, "score", "--top-k-features", "5") == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "data" and "top_k_features" in err["message"]


def test_missing_input_is_config_error(tmp_path, capsys):
    assert main(["score", "--input", str(tmp_path / "nope.csv")]) == 2
    assert json.loads(capsys.readouterr().err)["key"] == "ingest.path"


def test_alerts_needs_scores(demo):
    assert run(demo, "alerts") == 1


def test_bundled_data_matches_demo(demo):
    data = Path(__file__).resolve().parents[1] / "src" / "patsim" / "data"
    assert (data / "synthetic.csv").read_bytes() == (demo / "synthetic.csv").read_bytes()
    assert (data / "synthetic_events.csv").read_bytes() == (demo / "events.csv").read_bytes()


def test_seed_label_file(demo):
    assert run(demo, "score") == 0
    assert run(demo, "alerts") == 0
    first = json.loads((demo / "out" / "alerts.jsonl").read_text().splitlines()[0])
    (demo / "seed.csv").write_text(f"alert,label\n{first['id']},false\n", encoding="utf-8")
    assert run(demo, "vote", "--set", "alerting.seed_from_events=0",
               "--set", f"alerting.seed_labels_path={demo / 'seed.csv'}") == 0
    labeled = [json.loads(x) for x in (demo / "out" / "labeled.jsonl").read_text().splitlines()]
    assert labeled[0]["label"] == "false_positive" and labeled[0]["label_source"] == "human"
