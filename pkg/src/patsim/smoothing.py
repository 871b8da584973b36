"""Per-feature Hanning smoothing with renormalized boundary handling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import TimeSeriesFrame

DEFAULT_KERNEL_LENGTH = 11


def _check_length(length) -> int:
    if int(length) != length or length < 1 or length % 2 == 0:
        raise ValueError(f"kernel length must be an odd positive integer, got {length!r}")
    return int(length)


@dataclass(frozen=True)
class SmoothingConfig:
    kernel_length: int = DEFAULT_KERNEL_LENGTH
    per_feature_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_length(self.kernel_length)
        for name, length in self.per_feature_overrides.items():
            _check_length(length)

    def length_for(self, feature: str) -> int:
        return int(self.per_feature_overrides.get(feature, self.kernel_length))


def hanning_kernel(length: int) -> np.ndarray:
    """Normalized Hann weights ``0.5 - 0.5 cos(2 pi n / (length - 1))``.

    >>> hanning_kernel(5)
    array([0.  , 0.25, 0.5 , 0.25, 0.  ])
    """
    length = _check_length(length)
    if length == 1:
        return np.ones(1)
    n = np.arange(length)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / (length - 1))
    return w / w.sum()


def smooth_column(x: np.ndarray, length: int) -> np.ndarray:
    """Convolve one column with the Hann kernel.

    Near the ends only the overlapping weights are used, rescaled to sum to 1,
    so constant signals are fixed points everywhere.
    """
    x = np.asarray(x, dtype=np.float64)
    length = _check_length(length)
    if length > x.shape[0]:
        raise ValueError(
            f"kernel length {length} exceeds series length {x.shape[0]}")
    if length == 1:
        return x.copy()
    w = hanning_kernel(length)
    num = np.convolve(x, w, mode="same")
    den = np.convolve(np.ones_like(x), w, mode="same")
    out = num / den
    # the weighted mean cannot leave the data range; clip rounding excursions
    return np.clip(out, x.min(), x.max())


def smooth(frame: TimeSeriesFrame, config: SmoothingConfig | None = None) -> TimeSeriesFrame:
    if config is None:
        config = SmoothingConfig()
    if len(frame) == 0:
        raise ValueError("cannot smooth an empty frame")
    out = np.empty_like(frame.values)
    for j, name in enumerate(frame.feature_names):
        out[:, j] = smooth_column(frame.values[:, j], config.length_for(name))
    return frame.with_values(out)
