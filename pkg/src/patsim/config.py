"""Pipeline configuration: YAML file, defaults, overrides and validation.

The config is a nested mapping. Every key has a default; a user file only
needs to name what differs. Errors carry the dotted key path that failed.
"""
from __future__ import annotations

import copy
from pathlib import Path

import yaml

CONFIG_VERSION = 1

DEFAULTS = {
    "config_version": CONFIG_VERSION,
    "seed": 0,
    "output_dir": "out",
    "workers": 1,
    "ingest": {
        "path": None,
        "timestamp_column": "timestamp",
        "feature_columns": None,
        "missing": "error",
        "resample_period": None,
        "events_path": None,
        "normalize": True,
        "normalize_prefix_fraction": 0.25,
    },
    "smoothing": {
        "kernel_length": 11,
        "per_feature_overrides": {},
    },
    "windowing": {
        "length": 32,
        "stride": 8,
        "history_depth": None,
        "feature_subset": None,
        "mask_path": None,
        "extra_specs": [],
    },
    "distance": {
        "measure": "neg_max_xcorr",
        "offset_step": 1,
        "slide_aggregation": "min",
        "dimension_aggregation": "mean",
        "top_k_features": None,
        "feature_relevance": "target_window_variance",
        "importance_path": None,
    },
    "deviation": {
        "pruned": False,
        "merge_policy": "max",
        "explain_top": 3,
    },
    "alerting": {
        "threshold": None,
        "threshold_quantile": 0.95,
        "merge_gap": 0,
        "t_cutoff": 0.5,
        "k": 3,
        "T_anom": 0.5,
        "weighting": "uniform",
        "min_votes": 1,
        "seed_labels_path": None,
        "seed_from_events": 0,
    },
    "evaluation": {
        "lead": 0,
        "thresholds": None,
        "sweep_points": 21,
    },
    "tuning": {
        "dimensions": [
            {"name": "T_anom", "kind": "continuous", "lo": 0.0, "hi": 1.0, "target": "alerting.T_anom"},
            {"name": "k", "kind": "integer", "lo": 1, "hi": 10, "target": "alerting.k"},
        ],
        "budget": 25,
        "grid_resolution": [20, None],
        "grid_cap": 10000,
    },
    "modes": {
        "enabled": False,
        "radius": 0.5,
        "block": 600,
        "k": 2,
    },
}

# keys whose values are file paths checked at validation time
PATH_KEYS = ("ingest.path", "ingest.events_path", "windowing.mask_path",
             "distance.importance_path", "alerting.seed_labels_path")

_CHOICES = {
    "ingest.missing": ("interpolate", "drop_row", "error"),
    "distance.measure": ("euclid", "dtw", "xcorr", "euclidean_slide", "neg_max_xcorr", "euclidean"),
    "distance.slide_aggregation": ("min", "mean"),
    "distance.dimension_aggregation": ("mean", "max"),
    "distance.feature_relevance": ("target_window_variance", "external_importance_vector"),
    "deviation.merge_policy": ("max", "mean"),
    "alerting.weighting": ("uniform", "similarity_weighted"),
}

_POSITIVE_INTS = ("workers", "windowing.length", "windowing.stride", "distance.offset_step",
                  "alerting.k", "alerting.min_votes", "tuning.budget", "modes.k",
                  "smoothing.kernel_length", "evaluation.sweep_points", "tuning.grid_cap")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


def get_path(cfg: dict, key: str):
    node = cfg
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(key, "no such key")
        node = node[part]
    return node


def set_path(cfg: dict, key: str, value):
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(key, "no such key")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(key, "no such key")
    node[parts[-1]] = value


def _merge(base: dict, over: dict, prefix: str = ""):
    for key, value in over.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[key], dict) and key != "per_feature_overrides":
            if not isinstance(value, dict):
                raise ConfigError(path, "expected a section")
            _merge(base[key], value, path + ".")
        else:
            base[key] = value


def parse_override(text: str) -> tuple:
    """``section.key=value`` with the value parsed as YAML."""
    if "=" not in text:
        raise ConfigError(text, "override must look like section.key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def build_config(user: dict | None = None, overrides=(), base_dir=None) -> dict:
    """Defaults merged with ``user`` and ``--set`` overrides, then validated.

    Relative paths are resolved against ``base_dir`` (the config file's directory).
    """
    cfg = copy.deepcopy(DEFAULTS)
    if user:
        if not isinstance(user, dict):
            raise ConfigError("<root>", "config must be a mapping")
        _merge(cfg, user)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        set_path(cfg, key, value)
    if base_dir is not None:
        for key in PATH_KEYS + ("output_dir",):
            value = get_path(cfg, key)
            if value is not None and not Path(value).is_absolute():
                set_path(cfg, key, str(Path(base_dir) / value))
    validate(cfg)
    return cfg


def load_config(path, overrides=()) -> dict:
    path = Path(path)
    try:
        user = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"{path}: not valid YAML ({exc})") from None
    except OSError as exc:
        raise ConfigError("<file>", f"{path}: {exc.strerror}") from None
    return build_config(user, overrides, base_dir=path.parent)


def validate(cfg: dict, check_paths: bool = True):
    if cfg.get("config_version") != CONFIG_VERSION:
        raise ConfigError("config_version", f"unsupported version {cfg.get('config_version')!r}")
    for key, allowed in _CHOICES.items():
        if get_path(cfg, key) not in allowed:
            raise ConfigError(key, f"must be one of {list(allowed)}")
    for key in _POSITIVE_INTS:
        value = get_path(cfg, key)
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError(key, "must be a positive integer")
    if get_path(cfg, "smoothing.kernel_length") % 2 == 0:
        raise ConfigError("smoothing.kernel_length", "must be odd")
    for name, length in get_path(cfg, "smoothing.per_feature_overrides").items():
        if not isinstance(length, int) or length < 1 or length % 2 == 0:
            raise ConfigError(f"smoothing.per_feature_overrides.{name}", "must be an odd positive integer")
    if get_path(cfg, "windowing.stride") > get_path(cfg, "windowing.length"):
        raise ConfigError("windowing.stride", "must not exceed windowing.length")
    depth = get_path(cfg, "windowing.history_depth")
    if depth is not None and (not isinstance(depth, int) or depth < 1):
        raise ConfigError("windowing.history_depth", "must be a positive integer or null")
    topk = get_path(cfg, "distance.top_k_features")
    if topk is not None and (not isinstance(topk, int) or topk < 1):
        raise ConfigError("distance.top_k_features", "must be a positive integer or null")
    if not 0.0 <= float(get_path(cfg, "alerting.T_anom")) <= 1.0:
        raise ConfigError("alerting.T_anom", "must lie in [0, 1]")
    if get_path(cfg, "alerting.min_votes") > get_path(cfg, "alerting.k"):
        raise ConfigError("alerting.min_votes", "must not exceed alerting.k")
    q = get_path(cfg, "alerting.threshold_quantile")
    if not 0.0 <= float(q) <= 1.0:
        raise ConfigError("alerting.threshold_quantile", "must lie in [0, 1]")
    frac = get_path(cfg, "ingest.normalize_prefix_fraction")
    if not 0.0 < float(frac) <= 1.0:
        raise ConfigError("ingest.normalize_prefix_fraction", "must lie in (0, 1]")
    for n, dim in enumerate(get_path(cfg, "tuning.dimensions")):
        key = f"tuning.dimensions.{n}"
        for field in ("name", "kind", "lo", "hi", "target"):
            if field not in dim:
                raise ConfigError(f"{key}.{field}", "missing")
        if dim["kind"] not in ("continuous", "integer"):
            raise ConfigError(f"{key}.kind", "must be continuous or integer")
        if not dim["lo"] < dim["hi"]:
            raise ConfigError(f"{key}.lo", "lo must be < hi")
        try:
            get_path(cfg, dim["target"])
        except ConfigError:
            raise ConfigError(f"{key}.target", f"unknown pipeline key {dim['target']!r}") from None
    if len(get_path(cfg, "tuning.dimensions")) > 3:
        raise ConfigError("tuning.dimensions", "optimize at most 3 parameters at once")
    if check_paths:
        for key in PATH_KEYS:
            value = get_path(cfg, key)
            if value is not None and not Path(value).exists():
                raise ConfigError(key, f"file not found: {value}")


def dump_config(cfg: dict, path):
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=True), encoding="utf-8")
