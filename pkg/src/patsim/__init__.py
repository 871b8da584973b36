"""Unsupervised time-deviation scoring of multivariate sensor series.

Each window of a series is scored by its distance to the most similar
earlier window. High scores become alerts; a few labeled alerts propagate
labels to later ones by nearest-neighbour voting, and the voting parameters
can be tuned with Gaussian-process Bayesian optimization.
"""
from .distances import DistanceSpec, distance
from .deviation import DeviationSeries, score_windows, score_windows_pruned
from .ingest import EventInterval, TimeSeriesFrame, load_csv, load_events
from .windowing import Window, WindowSpec, slice_windows

__all__ = [
    "DeviationSeries", "DistanceSpec", "EventInterval", "TimeSeriesFrame", "Window",
    "WindowSpec", "distance", "load_csv", "load_events", "score_windows",
    "score_windows_pruned", "slice_windows",
]

__version__ = "0.1.0"
