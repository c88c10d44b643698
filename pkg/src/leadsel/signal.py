"""ECG data model: leads, lead-subset arms, segments, synthesis, and CSV I/O.

A segment always stores all 12 standard leads; arm selection subsets the
columns downstream, so every arm can be evaluated against the same round.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError, ParameterError

CLASS_NAMES = ("NORM", "MI", "CD", "STTC", "HYP")

N_LEADS = 12


class LeadId(enum.IntEnum):
    """The 12 standard ECG leads with a stable ordinal encoding."""

    I = 0
    II = 1
    III = 2
    aVR = 3
    aVL = 4
    aVF = 5
    V1 = 6
    V2 = 7
    V3 = 8
    V4 = 9
    V5 = 10
    V6 = 11


@dataclass(frozen=True)
class Arm:
    """One selectable lead subset."""

    arm_id: int
    leads: tuple[LeadId, ...]

    @property
    def channel_count(self) -> int:
        return len(self.leads)


@dataclass(frozen=True)
class ArmCatalog:
    """Ordered catalog of K lead-subset arms with contiguous ids 0..K-1."""

    arms: tuple[Arm, ...]

    def __post_init__(self):
        if not self.arms:
            raise ParameterError("catalog must contain at least one arm")
        seen_sets = set()
        for k, arm in enumerate(self.arms):
            if arm.arm_id != k:
                raise ParameterError(f"arm ids must be contiguous, got {arm.arm_id} at position {k}")
            if not arm.leads:
                raise ParameterError(f"arm {k} has an empty lead set")
            if len(set(arm.leads)) != len(arm.leads):
                raise ParameterError(f"arm {k} repeats a lead")
            key = frozenset(arm.leads)
            if key in seen_sets:
                raise ParameterError(f"arm {k} duplicates another arm's lead set")
            seen_sets.add(key)

    def __len__(self) -> int:
        return len(self.arms)

    def arm(self, arm_id: int) -> Arm:
        try:
            return self.arms[arm_id]
        except (IndexError, TypeError):
            raise LookupError(f"unknown arm {arm_id!r} (catalog has {len(self.arms)} arms)") from None

    def channel_counts(self) -> tuple[int, ...]:
        return tuple(arm.channel_count for arm in self.arms)


def default_catalog() -> ArmCatalog:
    """The 5-arm catalog: 2, 3, 4, 6 (limb) and all 12 leads."""
    L = LeadId
    subsets = (
        (L.I, L.II),
        (L.I, L.II, L.V2),
        (L.I, L.II, L.III, L.V2),
        (L.I, L.II, L.III, L.aVR, L.aVL, L.aVF),
        tuple(L),
    )
    return ArmCatalog(tuple(Arm(k, leads) for k, leads in enumerate(subsets)))


@dataclass(frozen=True)
class SegmentRecord:
    """One multi-lead ECG segment: the unit of a single decision round.

    ``samples`` has shape (n_samples, 12) in mV, columns in lead-ordinal
    order. The array is frozen after construction so records can be shared
    across threads.
    """

    segment_id: str
    samples: np.ndarray
    sampling_rate: float
    label: str
    fold: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != N_LEADS:
            raise ParameterError(f"samples must be (n, {N_LEADS}), got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ParameterError(f"segment {self.segment_id!r} contains non-finite samples")
        if self.sampling_rate <= 0:
            raise ParameterError("sampling_rate must be positive")
        if self.label not in CLASS_NAMES:
            raise ParameterError(f"unknown label {self.label!r}")
        if not 1 <= self.fold <= 10:
            raise ParameterError(f"fold must be in 1..10, got {self.fold}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate

    def label_index(self) -> int:
        return CLASS_NAMES.index(self.label)


# Relative per-lead projection of the reference waveform; aVR points away
# from the mean electrical axis, hence the sign flip.
DEFAULT_LEAD_GAINS = (0.6, 1.0, 0.5, -0.4, 0.3, 0.7, 0.4, 0.9, 0.8, 0.7, 0.6, 0.5)

# (amplitude mV, gaussian width s, offset from R in s)
DEFAULT_P_WAVE = (0.15, 0.03, -0.18)
DEFAULT_QRS_WAVE = (1.2, 0.02, 0.0)
DEFAULT_T_WAVE = (0.35, 0.06, 0.24)


@dataclass(frozen=True)
class SyntheticEcgParams:
    """Gaussian-bump beat morphology repeated at the heart-rate period."""

    heart_rate_bpm: float = 60.0
    noise_std: float = 0.0
    lead_gains: tuple[float, ...] = DEFAULT_LEAD_GAINS
    p_wave: tuple[float, float, float] = DEFAULT_P_WAVE
    qrs_wave: tuple[float, float, float] = DEFAULT_QRS_WAVE
    t_wave: tuple[float, float, float] = DEFAULT_T_WAVE
    first_beat_s: float = 0.35
    rng_seed: int = 0

    def __post_init__(self):
        if not 30.0 <= self.heart_rate_bpm <= 220.0:
            raise ParameterError(f"heart_rate_bpm must be in [30, 220], got {self.heart_rate_bpm}")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be non-negative")
        if len(self.lead_gains) != N_LEADS:
            raise ParameterError(f"lead_gains must have {N_LEADS} entries")
        for name, wave in (("p_wave", self.p_wave), ("qrs_wave", self.qrs_wave), ("t_wave", self.t_wave)):
            if wave[1] <= 0:
                raise ParameterError(f"{name} width must be positive")
        if self.first_beat_s < 0:
            raise ParameterError("first_beat_s must be non-negative")


def generate_synthetic_segment(
    params: SyntheticEcgParams,
    duration_s: float,
    fs: float,
    *,
    segment_id: str = "synth",
    label: str = "NORM",
    fold: int = 1,
) -> tuple[SegmentRecord, list[int]]:
    """Synthesize a 12-lead segment and return it with exact R-peak indices.

    The single-lead reference waveform is a sum of P/QRS/T gaussian bumps
    repeated at the beat period; each lead is that waveform scaled by its
    gain, plus white noise. Deterministic for a fixed ``rng_seed``.
    """
    if duration_s <= 0:
        raise ParameterError("duration_s must be positive")
    if fs < 50:
        raise ParameterError(f"fs must be at least 50 Hz, got {fs}")

    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    period = 60.0 / params.heart_rate_bpm

    reference = np.zeros(n)
    true_r_peaks: list[int] = []
    beat_time = params.first_beat_s
    while beat_time < duration_s:
        for amp, width, offset in (params.p_wave, params.qrs_wave, params.t_wave):
            center = beat_time + offset
            reference += amp * np.exp(-0.5 * ((t - center) / width) ** 2)
        r_index = int(round(beat_time * fs))
        if r_index < n:
            true_r_peaks.append(r_index)
        beat_time += period

    samples = np.outer(reference, np.asarray(params.lead_gains, dtype=np.float64))
    if params.noise_std > 0:
        rng = np.random.default_rng(params.rng_seed)
        samples = samples + rng.normal(0.0, params.noise_std, size=samples.shape)

    record = SegmentRecord(
        segment_id=segment_id, samples=samples, sampling_rate=float(fs), label=label, fold=fold
    )
    return record, true_r_peaks


def select_leads(segment: SegmentRecord, arm_id: int, catalog: ArmCatalog) -> np.ndarray:
    """Column subset for the arm's leads, in the arm's lead order."""
    arm = catalog.arm(arm_id)
    ordinals = [int(lead) for lead in arm.leads]
    return segment.samples[:, ordinals].copy()


def _format_float(x: float) -> str:
    return repr(float(x))


def write_segments(segments: list[SegmentRecord], path) -> None:
    """Write a dataset: per segment a ``segment_id,fold,label,fs,n_samples``
    header line followed by n_samples rows of 12 amplitudes."""
    with open(path, "w") as fh:
        for seg in segments:
            fs = seg.sampling_rate
            fs_text = str(int(fs)) if float(fs).is_integer() else _format_float(fs)
            fh.write(f"{seg.segment_id},{seg.fold},{seg.label},{fs_text},{seg.n_samples}\n")
            for row in seg.samples:
                fh.write(",".join(_format_float(v) for v in row) + "\n")


def load_segments(path) -> list[SegmentRecord]:
    """Parse a segment CSV written by :func:`write_segments`.

    Raises :class:`IngestionError` naming the offending 1-based line number
    on malformed rows, wrong column counts, or non-finite samples.
    """
    segments: list[SegmentRecord] = []
    with open(path) as fh:
        lines = fh.read().splitlines()

    i = 0
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        header = line.split(",")
        if len(header) != 5:
            raise IngestionError(f"line {i + 1}: expected 5 header fields, got {len(header)}")
        segment_id, fold_text, label, fs_text, count_text = header
        try:
            fold = int(fold_text)
            fs = float(fs_text)
            n_samples = int(count_text)
        except ValueError as exc:
            raise IngestionError(f"line {i + 1}: malformed header ({exc})") from None
        if n_samples <= 0:
            raise IngestionError(f"line {i + 1}: n_samples must be positive")
        rows = np.empty((n_samples, N_LEADS))
        for j in range(n_samples):
            line_no = i + 2 + j
            if i + 1 + j >= len(lines):
                raise IngestionError(f"line {line_no}: segment {segment_id!r} truncated")
            fields = lines[i + 1 + j].split(",")
            if len(fields) != N_LEADS:
                raise IngestionError(f"line {line_no}: expected {N_LEADS} amplitudes, got {len(fields)}")
            try:
                values = [float(v) for v in fields]
            except ValueError:
                raise IngestionError(f"line {line_no}: malformed amplitude") from None
            if not all(math.isfinite(v) for v in values):
                raise IngestionError(f"line {line_no}: non-finite amplitude")
            rows[j] = values
        try:
            segments.append(
                SegmentRecord(segment_id=segment_id, samples=rows, sampling_rate=fs, label=label, fold=fold)
            )
        except ParameterError as exc:
            raise IngestionError(f"line {i + 1}: {exc}") from None
        i += 1 + n_samples
    return segments


def partition_by_fold(segments: list[SegmentRecord]) -> tuple[list[SegmentRecord], list[SegmentRecord], list[SegmentRecord]]:
    """PTB-XL style split: folds 1-8 train, 9 validation, 10 test."""
    train = [s for s in segments if s.fold <= 8]
    validation = [s for s in segments if s.fold == 9]
    test = [s for s in segments if s.fold == 10]
    return train, validation, test
