"""Per-round context extraction from lead II.

Pipeline: bandpass filter, derivative, squaring, moving-window integration,
adaptive dual-threshold peak decision, then a fixed window around the chosen
R peak, max-abs normalization, and block one-hot embedding per arm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, filtfilt, find_peaks

from .errors import BoundaryError, ContextError, ParameterError
from .signal import LeadId, SegmentRecord

DEFAULT_BAND = (5.0, 15.0)
PRE_WINDOW_S = 0.25
POST_WINDOW_S = 0.30
INTEGRATION_WINDOW_S = 0.15
REFRACTORY_S = 0.20
DEGENERATE_EPS = 1e-9


@dataclass(frozen=True)
class ContextVector:
    """Normalized beat features for one decision round."""

    features: np.ndarray
    source_segment: str
    r_peak_index: int
    degenerate: bool = False

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        features.flags.writeable = False
        object.__setattr__(self, "features", features)

    @property
    def dim(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class EmbeddedContext:
    """Per-arm block embeddings: row k holds the features at block k."""

    vectors: np.ndarray  # (K, K*d)
    dim: int

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        vectors.flags.writeable = False
        object.__setattr__(self, "vectors", vectors)

    @property
    def n_arms(self) -> int:
        return self.vectors.shape[0]

    def vector(self, arm_id: int) -> np.ndarray:
        return self.vectors[arm_id]


def bandpass_filter(signal: np.ndarray, fs: float, low: float = DEFAULT_BAND[0], high: float = DEFAULT_BAND[1]) -> np.ndarray:
    """Zero-phase Butterworth bandpass; output has the input's length.

    Zero-phase filtering keeps detected peak indices aligned with the raw
    signal, which the beat windowing relies on.
    """
    if not 0 < low < high < fs / 2:
        raise ParameterError(f"band must satisfy 0 < low < high < fs/2, got ({low}, {high}) at fs={fs}")
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError("signal must be one-dimensional")
    b, a = butter(2, [low, high], btype="band", fs=fs)
    padlen = 3 * max(len(a), len(b))
    if x.size <= padlen:
        raise ParameterError(f"signal too short to filter ({x.size} samples)")
    return filtfilt(b, a, x)


def detect_r_peaks(lead_ii: np.ndarray, fs: float) -> list[int]:
    """QRS detection: returns strictly increasing R-peak sample indices.

    Stages: bandpass (5-15 Hz), five-point derivative, squaring, 150 ms
    moving-window integration, then an adaptive dual-threshold decision with
    a 200 ms refractory period and RR-gap search-back. Candidate peaks are
    refined to the local max of the filtered signal magnitude.
    """
    x = np.asarray(lead_ii, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError("lead_ii must be one-dimensional")
    if x.size < 2 * fs:
        raise ParameterError(f"need at least 2 s of signal ({int(2 * fs)} samples), got {x.size}")
    if not np.any(x):
        return []

    filtered = bandpass_filter(x, fs)
    # centered five-point slope kernel: zero lag, peak energy at the QRS
    kernel = np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * (fs / 8.0)
    derivative = np.convolve(filtered, kernel, mode="same")
    squared = derivative**2
    win = max(1, int(round(INTEGRATION_WINDOW_S * fs)))
    integrated = np.convolve(squared, np.ones(win) / win, mode="same")

    refractory = max(1, int(round(REFRACTORY_S * fs)))
    candidates, _ = find_peaks(integrated, distance=refractory)
    if candidates.size == 0:
        return []

    learn = integrated[: min(integrated.size, int(2 * fs))]
    spki = 0.25 * float(learn.max())
    npki = 0.5 * float(learn.mean())
    thr1 = npki + 0.25 * (spki - npki)

    accepted: list[int] = []
    rejected_since: list[int] = []
    rr_intervals: list[int] = []

    for cand in candidates:
        value = integrated[cand]
        # search-back: a long RR gap means a beat was likely missed
        if accepted and len(rr_intervals) >= 2 and rejected_since:
            rr_avg = float(np.mean(rr_intervals[-8:]))
            if cand - accepted[-1] > 1.66 * rr_avg:
                thr2 = 0.5 * thr1
                back = max(rejected_since, key=lambda idx: integrated[idx])
                if integrated[back] >= thr2 and back - accepted[-1] >= refractory:
                    rr_intervals.append(back - accepted[-1])
                    accepted.append(back)
                    rejected_since = []
                    spki = 0.25 * float(integrated[back]) + 0.75 * spki
                    thr1 = npki + 0.25 * (spki - npki)
        if value >= thr1:
            if accepted:
                rr_intervals.append(int(cand) - accepted[-1])
            accepted.append(int(cand))
            rejected_since = []
            spki = 0.125 * float(value) + 0.875 * spki
        else:
            rejected_since.append(int(cand))
            npki = 0.125 * float(value) + 0.875 * npki
        thr1 = npki + 0.25 * (spki - npki)

    # refine each integrated-signal peak to the QRS center
    radius = max(1, int(round(0.1 * fs)))
    magnitude = np.abs(filtered)
    refined = []
    for cand in accepted:
        lo = max(0, cand - radius)
        hi = min(x.size, cand + radius + 1)
        refined.append(lo + int(np.argmax(magnitude[lo:hi])))
    return sorted(set(refined))


def beat_window(fs: float) -> tuple[int, int]:
    """Samples kept before and after the R peak (0.25 s / 0.30 s)."""
    return int(round(PRE_WINDOW_S * fs)), int(round(POST_WINDOW_S * fs))


def segment_beat(lead_ii: np.ndarray, fs: float, r_peak: int) -> np.ndarray:
    """Window [r_peak - 0.25*fs, r_peak + 0.3*fs) around the peak."""
    x = np.asarray(lead_ii, dtype=np.float64)
    pre, post = beat_window(fs)
    start = r_peak - pre
    stop = r_peak + post
    if start < 0 or stop > x.size:
        raise BoundaryError(
            f"beat window [{start}, {stop}) exceeds signal of length {x.size}"
        )
    return x[start:stop].copy()


def normalize_beat(beat: np.ndarray, eps: float = DEGENERATE_EPS) -> tuple[np.ndarray, bool]:
    """Scale so max |value| is 1; an (all but) all-zero beat passes through flagged.

    Returns ``(values, degenerate)``. Idempotent: a beat whose max |value|
    is already 1 is returned unchanged.
    """
    x = np.asarray(beat, dtype=np.float64)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak > eps:
        return x / peak, False
    return x.copy(), True


def _resample(beat: np.ndarray, d: int, mode: str) -> np.ndarray:
    length = beat.shape[0]
    if d == length:
        return beat
    if mode == "interp":
        positions = np.linspace(0.0, length - 1.0, d)
        return np.interp(positions, np.arange(length), beat)
    if mode == "pad":
        if d < length:
            raise ParameterError(f"pad mode needs d >= beat length ({length}), got {d}")
        out = np.zeros(d)
        out[:length] = beat
        return out
    raise ParameterError(f"unknown resample mode {mode!r}")


def build_context(
    segment: SegmentRecord,
    d: int,
    fs: float | None = None,
    *,
    mode: str = "interp",
) -> ContextVector:
    """Extract the round's context: median usable R peak on lead II, then
    window, resample to exactly ``d`` features, and normalize.

    Normalization happens after resampling so the max-abs-1 invariant holds
    for every output length.
    """
    if d <= 0:
        raise ParameterError("d must be positive")
    if fs is None:
        fs = segment.sampling_rate
    lead_ii = segment.samples[:, LeadId.II]
    peaks = detect_r_peaks(lead_ii, fs)
    pre, post = beat_window(fs)
    usable = [r for r in peaks if r - pre >= 0 and r + post <= lead_ii.size]
    if not usable:
        raise ContextError(f"segment {segment.segment_id!r}: no R peak with a valid window")
    r_peak = usable[len(usable) // 2]
    beat = segment_beat(lead_ii, fs, r_peak)
    features, degenerate = normalize_beat(_resample(beat, d, mode))
    return ContextVector(
        features=features,
        source_segment=segment.segment_id,
        r_peak_index=r_peak,
        degenerate=degenerate,
    )


def embed_for_arms(ctx: ContextVector, n_arms: int) -> EmbeddedContext:
    """K vectors of length K*d; vector k carries the features at block k."""
    if n_arms < 1:
        raise ParameterError("n_arms must be at least 1")
    d = ctx.dim
    vectors = np.zeros((n_arms, n_arms * d))
    for k in range(n_arms):
        vectors[k, k * d : (k + 1) * d] = ctx.features
    return EmbeddedContext(vectors=vectors, dim=d)
