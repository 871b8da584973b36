"""Window-to-window distances: sliding Euclidean, DTW and negated max cross-correlation.

All measures are computed per dimension and then aggregated across
dimensions. Smaller values mean more similar windows.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.fft import irfft, next_fast_len, rfft

from .windowing import Window

EUCLIDEAN = "euclidean_slide"
DTW = "dtw"
XCORR = "neg_max_xcorr"
MEASURES = (EUCLIDEAN, DTW, XCORR)

MEASURE_ALIASES = {"euclid": EUCLIDEAN, "euclidean": EUCLIDEAN, "dtw": DTW,
                   "xcorr": XCORR, **{m: m for m in MEASURES}}

# smallest / largest attainable value of each measure
MEASURE_FLOOR = {EUCLIDEAN: 0.0, DTW: 0.0, XCORR: -1.0}
MEASURE_CAP = {EUCLIDEAN: math.inf, DTW: math.inf, XCORR: 1.0}

XCORR_DIRECT_MAX = 256


class DistanceError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceSpec:
    """Which measure to use and how to reduce it.

    Parameters
    ----------
    measure : {'euclidean_slide', 'dtw', 'neg_max_xcorr'}
    offset_step : int
        Step used when sliding the shorter window over the longer one.
    slide_aggregation : {'min', 'mean'}
        Reduction over offsets for unequal-length Euclidean comparisons.
    dimension_aggregation : {'mean', 'max'}
    top_k_features : int, optional
        Compare only the ``k`` most relevant shared features.
    feature_relevance : {'target_window_variance', 'external_importance_vector'}
    importance : dict, optional
        Feature name -> importance, required for the external relevance mode.
    xcorr_method : {'auto', 'direct', 'fft'}
        'auto' uses the direct sum up to 256 samples and FFT above.
    """

    measure: str = XCORR
    offset_step: int = 1
    slide_aggregation: str = "min"
    dimension_aggregation: str = "mean"
    top_k_features: int | None = None
    feature_relevance: str = "target_window_variance"
    importance: dict | None = field(default=None, hash=False, compare=False)
    xcorr_method: str = "auto"

    def __post_init__(self):
        measure = MEASURE_ALIASES.get(self.measure)
        if measure is None:
            raise DistanceError(f"unknown measure {self.measure!r}")
        object.__setattr__(self, "measure", measure)
        if self.offset_step < 1:
            raise DistanceError("offset_step must be >= 1")
        if self.slide_aggregation not in ("min", "mean"):
            raise DistanceError(f"bad slide_aggregation {self.slide_aggregation!r}")
        if self.dimension_aggregation not in ("mean", "max"):
            raise DistanceError(f"bad dimension_aggregation {self.dimension_aggregation!r}")
        if self.top_k_features is not None and self.top_k_features < 1:
            raise DistanceError("top_k_features must be positive")
        if self.feature_relevance not in ("target_window_variance", "external_importance_vector"):
            raise DistanceError(f"bad feature_relevance {self.feature_relevance!r}")
        if self.xcorr_method not in ("auto", "direct", "fft"):
            raise DistanceError(f"bad xcorr_method {self.xcorr_method!r}")

    @property
    def floor(self) -> float:
        return MEASURE_FLOOR[self.measure]

    @property
    def cap(self) -> float:
        return MEASURE_CAP[self.measure]


# -- feature handling --------------------------------------------------------

def _as_window(w) -> Window:
    if isinstance(w, Window):
        return w
    from .ingest import TimeSeriesFrame
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    names = tuple(f"f{i}" for i in range(arr.shape[1]))
    frame = TimeSeriesFrame(np.arange(arr.shape[0], dtype=np.int64), arr, names)
    return Window(frame, 0, arr.shape[0])


def _variance(x: np.ndarray) -> float:
    return float(np.var(x, ddof=1)) if x.shape[0] > 1 else 0.0


def select_top_features(target, candidate, spec: DistanceSpec) -> list:
    """Shared features ranked by relevance, truncated to ``spec.top_k_features``.

    Relevance is the target window's sample variance or an external
    importance vector; ties go to the lexically smaller name.
    """
    target, candidate = _as_window(target), _as_window(candidate)
    other = set(candidate.feature_names)
    shared = [n for n in target.feature_names if n in other]
    if not shared:
        raise DistanceError(
            f"windows share no features: {target.feature_names} vs {candidate.feature_names}")
    if spec.feature_relevance == "external_importance_vector":
        if spec.importance is None:
            raise DistanceError("external_importance_vector selected but no importance supplied")
        score = {n: float(spec.importance.get(n, 0.0)) for n in shared}
    else:
        if spec.top_k_features is None or spec.top_k_features >= len(shared):
            return sorted(shared)
        score = {n: _variance(target.column(n)) for n in shared}
    ranked = sorted(shared, key=lambda n: (-score[n], n))
    if spec.top_k_features is not None:
        ranked = ranked[:spec.top_k_features]
    return ranked


def aligned_arrays(w1, w2, spec: DistanceSpec):
    """Column-aligned value arrays of the features both windows will be compared on."""
    w1, w2 = _as_window(w1), _as_window(w2)
    if w1.feature_names == w2.feature_names and spec.top_k_features is None:
        return w1.values, w2.values
    names = select_top_features(w1, w2, spec)
    i1 = [w1.feature_names.index(n) for n in names]
    i2 = [w2.feature_names.index(n) for n in names]
    return w1.values[:, i1], w2.values[:, i2]


# -- Euclidean ---------------------------------------------------------------

@njit(cache=True, nogil=True)
def _euclid_equal(a, b, use_max, bound, counter):
    """RMS-scaled per-dimension Euclidean distance, aggregated across dims.

    Accumulation is strictly sequential so that the early-abandon path and the
    full path produce bitwise identical values. The running lower bound is
    compared against ``bound`` after every sample; on abandonment ``inf`` is
    returned. ``counter[0]`` counts squared-difference accumulations.
    """
    n, k = a.shape
    acc = 0.0
    for d in range(k):
        ss = 0.0
        for t in range(n):
            diff = a[t, d] - b[t, d]
            ss += diff * diff
            counter[0] += 1
            part = math.sqrt(ss / n)
            if use_max:
                lb = part if part > acc else acc
            else:
                lb = (acc + part) / k
            if lb > bound:
                return math.inf
        dd = math.sqrt(ss / n)
        if use_max:
            if dd > acc:
                acc = dd
        else:
            acc += dd
    if use_max:
        return acc
    return acc / k


def euclidean_arrays(a, b, spec: DistanceSpec, bound=math.inf, counter=None):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if counter is None:
        counter = np.zeros(1, dtype=np.int64)
    use_max = spec.dimension_aggregation == "max"
    if a.shape[0] == b.shape[0]:
        return _euclid_equal(a, b, use_max, bound, counter)
    short, long_ = (a, b) if a.shape[0] < b.shape[0] else (b, a)
    m = short.shape[0]
    offsets = range(0, long_.shape[0] - m + 1, spec.offset_step)
    if spec.slide_aggregation == "min":
        best = math.inf
        for off in offsets:
            # completed offsets are <= bound, so tightening it is exact
            v = _euclid_equal(short, np.ascontiguousarray(long_[off:off + m]), use_max,
                              min(bound, best), counter)
            if v < best:
                best = v
        return best
    vals = [_euclid_equal(short, np.ascontiguousarray(long_[off:off + m]), use_max,
                          math.inf, counter) for off in offsets]
    return float(np.mean(vals))


def euclidean_slide(w1, w2, spec: DistanceSpec | None = None) -> float:
    """RMS-scaled Euclidean distance; the shorter window slides over the longer."""
    spec = spec or DistanceSpec(measure=EUCLIDEAN)
    a, b = aligned_arrays(w1, w2, spec)
    return float(euclidean_arrays(a, b, spec))


# -- DTW ---------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _dtw_1d(x, y):
    """Full-table DTW with |x - y| cost, divided by the warping path length.

    Among equal-cost paths the shortest is taken, which keeps the result
    symmetric under swapping the arguments.
    """
    n, m = x.shape[0], y.shape[0]
    cost = np.empty((n + 1, m + 1))
    plen = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, :] = np.inf
    cost[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            c0, l0 = cost[i - 1, j - 1], plen[i - 1, j - 1]
            c1, l1 = cost[i - 1, j], plen[i - 1, j]
            c2, l2 = cost[i, j - 1], plen[i, j - 1]
            bc, bl = c0, l0
            if c1 < bc or (c1 == bc and l1 < bl):
                bc, bl = c1, l1
            if c2 < bc or (c2 == bc and l2 < bl):
                bc, bl = c2, l2
            cost[i, j] = bc + abs(x[i - 1] - y[j - 1])
            plen[i, j] = bl + 1
    return cost[n, m] / plen[n, m]


@njit(cache=True, nogil=True)
def _dtw_dims(a, b, use_max):
    k = a.shape[1]
    acc = 0.0
    for d in range(k):
        v = _dtw_1d(np.ascontiguousarray(a[:, d]), np.ascontiguousarray(b[:, d]))
        if use_max:
            if v > acc:
                acc = v
        else:
            acc += v
    if use_max:
        return acc
    return acc / k


def dtw_arrays(a, b, spec: DistanceSpec) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DistanceError("DTW needs nonempty windows")
    return _dtw_dims(a, b, spec.dimension_aggregation == "max")


def dtw_distance(w1, w2, spec: DistanceSpec | None = None) -> float:
    """Per-dimension DTW normalized by warping-path length, then aggregated."""
    spec = spec or DistanceSpec(measure=DTW)
    a, b = aligned_arrays(w1, w2, spec)
    return float(dtw_arrays(a, b, spec))


# -- cross-correlation -------------------------------------------------------

def _fft_xcorr(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Full cross-correlation of matching columns of ``x`` and ``y`` via one real FFT."""
    n, m = x.shape[0], y.shape[0]
    size = next_fast_len(n + m - 1, real=True)
    spec = rfft(x, size, axis=0) * rfft(y[::-1], size, axis=0)
    return irfft(spec, size, axis=0)[:n + m - 1]


def full_xcorr(x: np.ndarray, y: np.ndarray, method: str = "auto") -> np.ndarray:
    """Full discrete cross-correlation of two 1-D sequences over every lag."""
    if method == "auto":
        method = "direct" if max(x.shape[0], y.shape[0]) <= XCORR_DIRECT_MAX else "fft"
    if method == "direct":
        return np.correlate(x, y, mode="full")
    return _fft_xcorr(np.asarray(x, dtype=np.float64)[:, None],
                      np.asarray(y, dtype=np.float64)[:, None])[:, 0]


def xcorr_arrays(a, b, spec: DistanceSpec) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.sqrt(np.einsum("ij,ij->j", a, a))
    nb = np.sqrt(np.einsum("ij,ij->j", b, b))
    keep = np.flatnonzero((na != 0.0) & (nb != 0.0))
    if keep.size == 0:
        raise DistanceError("every compared dimension has zero norm; cross-correlation undefined")
    if keep.size < a.shape[1]:
        skipped = sorted(set(range(a.shape[1])) - set(keep.tolist()))
        warnings.warn(f"skipping zero-norm dimensions {skipped} in cross-correlation",
                      RuntimeWarning, stacklevel=3)
    method = spec.xcorr_method
    if method == "auto":
        method = "direct" if max(a.shape[0], b.shape[0]) <= XCORR_DIRECT_MAX else "fft"
    if method == "fft":
        peaks = _fft_xcorr(a[:, keep], b[:, keep]).max(axis=0)
    else:
        peaks = np.array([np.correlate(a[:, d], b[:, d], mode="full").max() for d in keep])
    per_dim = np.clip(-peaks / (na[keep] * nb[keep]), -1.0, 1.0).tolist()
    if spec.dimension_aggregation == "max":
        return float(max(per_dim))
    return float(math.fsum(per_dim) / len(per_dim))


def xcorr_distance(w1, w2, spec: DistanceSpec | None = None) -> float:
    """Negated normalized maximum cross-correlation, in [-1, 1]."""
    spec = spec or DistanceSpec(measure=XCORR)
    a, b = aligned_arrays(w1, w2, spec)
    return xcorr_arrays(a, b, spec)


_ARRAY_KERNELS = {
    EUCLIDEAN: lambda a, b, s: float(euclidean_arrays(a, b, s)),
    DTW: dtw_arrays,
    XCORR: xcorr_arrays,
}


def distance(w1, w2, spec: DistanceSpec) -> float:
    """Dispatch to the measure named by ``spec``; ``w1`` is the target window."""
    a, b = aligned_arrays(w1, w2, spec)
    return float(_ARRAY_KERNELS[spec.measure](a, b, spec))
