"""Channel-count-adaptive beat classifier and per-arm verdict tables.

The reward signal of the simulator is "did arm k classify this segment
correctly"; it can come from the built-in reduced classifier trained here
or from an externally produced verdict CSV.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import IngestionError, ParameterError
from .signal import CLASS_NAMES, ArmCatalog, SegmentRecord


@dataclass(frozen=True)
class DapSpec:
    """Fixed output geometry of the dimension-adaptive pooling stage."""

    target_channels: int
    target_length: int
    pooling: str = "max"

    def __post_init__(self):
        if self.target_channels < 1 or self.target_length < 1:
            raise ParameterError("pooling targets must be at least 1")
        if self.pooling not in ("max", "mean"):
            raise ParameterError(f"pooling must be max or mean, got {self.pooling!r}")


@dataclass(frozen=True)
class ConvBlockSpec:
    """One conv block: time-axis kernel shared across leads."""

    kernel_width: int
    in_channels: int
    out_channels: int
    stride: int = 1
    batchnorm: bool = True
    residual: bool = False

    def __post_init__(self):
        if self.kernel_width < 1 or self.kernel_width % 2 == 0:
            raise ParameterError("kernel_width must be odd and positive")
        if min(self.in_channels, self.out_channels, self.stride) < 1:
            raise ParameterError("channels and stride must be at least 1")


@dataclass(frozen=True)
class ReducedClassifierSpec:
    """Conv stack + DAP + dense head, sized for desk-scale training."""

    blocks: tuple[ConvBlockSpec, ...]
    dap: DapSpec
    dense_widths: tuple[int, ...] = (32,)
    dropout: float = 0.5

    def __post_init__(self):
        if not self.blocks:
            raise ParameterError("at least one conv block is required")
        if self.blocks[0].in_channels != 1:
            raise ParameterError("first block must take the single raw input channel")
        for prev, cur in zip(self.blocks, self.blocks[1:]):
            if prev.out_channels != cur.in_channels:
                raise ParameterError(
                    f"block channels do not chain: {prev.out_channels} -> {cur.in_channels}"
                )
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must be in [0, 1)")
        if any(w < 1 for w in self.dense_widths):
            raise ParameterError("dense widths must be at least 1")

    def flat_features(self) -> int:
        return self.blocks[-1].out_channels * self.dap.target_length * self.dap.target_channels


def default_classifier_spec() -> ReducedClassifierSpec:
    """Three stride-2 blocks with shrinking kernels, trainable in seconds."""
    return ReducedClassifierSpec(
        blocks=(
            ConvBlockSpec(kernel_width=7, in_channels=1, out_channels=4, stride=2),
            ConvBlockSpec(kernel_width=5, in_channels=4, out_channels=8, stride=2, residual=True),
            ConvBlockSpec(kernel_width=3, in_channels=8, out_channels=8, stride=2, residual=True),
        ),
        dap=DapSpec(target_channels=2, target_length=8),
        dense_widths=(32,),
        dropout=0.5,
    )


def spec_to_dict(spec: ReducedClassifierSpec) -> dict:
    return asdict(spec)


def spec_from_dict(payload: dict) -> ReducedClassifierSpec:
    blocks = tuple(ConvBlockSpec(**b) for b in payload["blocks"])
    dap = DapSpec(**payload["dap"])
    return ReducedClassifierSpec(
        blocks=blocks,
        dap=dap,
        dense_widths=tuple(payload["dense_widths"]),
        dropout=payload["dropout"],
    )


def _bin_edges(size: int, bins: int) -> list[tuple[int, int]]:
    # adaptive-pooling convention: bin i covers [floor(i*L/B), ceil((i+1)*L/B))
    return [(i * size // bins, -(-((i + 1) * size) // bins)) for i in range(bins)]


def dap_pool(values: np.ndarray, spec: DapSpec) -> np.ndarray:
    """Pool an (L, C) matrix onto the fixed (target_length, target_channels)
    grid using contiguous bins on both axes."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ParameterError(f"input must be a non-empty 2-d matrix, got shape {values.shape}")
    length, channels = values.shape
    rows = _bin_edges(length, spec.target_length)
    cols = _bin_edges(channels, spec.target_channels)
    out = np.empty((spec.target_length, spec.target_channels))
    reduce = np.max if spec.pooling == "max" else np.mean
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[i, j] = reduce(values[r0:r1, c0:c1])
    return out


@dataclass
class VerdictTable:
    """Per-segment record of which arms classify correctly."""

    n_arms: int
    bits: dict[str, tuple[bool, ...]]
    predictions: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for segment_id, bitmap in self.bits.items():
            if len(bitmap) != self.n_arms:
                raise ParameterError(
                    f"segment {segment_id!r}: bitmap width {len(bitmap)} != {self.n_arms} arms"
                )

    def bitmap(self, segment_id: str) -> tuple[bool, ...]:
        return self.bits[segment_id]

    def __contains__(self, segment_id: str) -> bool:
        return segment_id in self.bits

    def __len__(self) -> int:
        return len(self.bits)


def write_verdict_table(table: VerdictTable, path) -> None:
    k = table.n_arms
    header = (
        ["segment_id"]
        + [f"arm{i}" for i in range(k)]
        + [f"pred{i}" for i in range(k)]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for segment_id in table.bits:
            bits = table.bits[segment_id]
            preds = table.predictions.get(segment_id, ("",) * k)
            row = [segment_id] + [str(int(b)) for b in bits] + list(preds)
            fh.write(",".join(row) + "\n")


def load_verdict_table(path) -> VerdictTable:
    """Parse a verdict CSV; the arm-column count defines the table width."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise IngestionError("verdict file is empty")
    header = lines[0].split(",")
    arm_cols = [h for h in header if h.startswith("arm")]
    k = len(arm_cols)
    if k == 0 or header[: 1 + k] != ["segment_id"] + [f"arm{i}" for i in range(k)]:
        raise IngestionError("line 1: malformed verdict header")
    expect_preds = len(header) == 1 + 2 * k
    if not expect_preds and len(header) != 1 + k:
        raise IngestionError("line 1: malformed verdict header")
    bits: dict[str, tuple[bool, ...]] = {}
    preds: dict[str, tuple[str, ...]] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != len(header):
            raise IngestionError(
                f"line {line_no}: expected {len(header)} fields, got {len(fields)}"
            )
        segment_id = fields[0]
        try:
            bitmap = tuple(bool(int(v)) for v in fields[1 : 1 + k])
        except ValueError:
            raise IngestionError(f"line {line_no}: bits must be 0 or 1") from None
        bits[segment_id] = bitmap
        if expect_preds:
            row_preds = tuple(fields[1 + k :])
            for p in row_preds:
                if p and p not in CLASS_NAMES:
                    raise IngestionError(f"line {line_no}: unknown class {p!r}")
            preds[segment_id] = row_preds
    return VerdictTable(n_arms=k, bits=bits, predictions=preds)


def train_reduced_classifier(
    train_segments: list[SegmentRecord],
    spec: ReducedClassifierSpec,
    catalog: ArmCatalog,
    epochs: int,
    seed: int,
    *,
    learning_rate: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    batch_size: int = 80,
    l2_conv: float = 2e-4,
    l2_dense: float = 5e-5,
    views_per_step: int = 2,
    dtype: str = "float32",
):
    """Train the reduced model with dimension-randomized accumulated gradients.

    Each optimizer step draws random arms from the catalog, runs the batch
    through each arm's channel view, and accumulates the view gradients
    before applying one update, so one set of weights serves every channel
    count.
    """
    if not train_segments:
        raise ParameterError("training set is empty")
    if batch_size < 1 or epochs < 0 or views_per_step < 1:
        raise ParameterError("batch_size and views_per_step must be >= 1, epochs >= 0")
    from . import _net

    return _net.train_model(
        train_segments,
        spec,
        catalog,
        epochs,
        seed,
        learning_rate=learning_rate,
        betas=betas,
        batch_size=batch_size,
        l2_conv=l2_conv,
        l2_dense=l2_dense,
        views_per_step=views_per_step,
        dtype=dtype,
    )


def classify(model, segment: SegmentRecord, arm_id: int, catalog: ArmCatalog) -> int:
    """Deterministic 5-way argmax on the arm's channel subset."""
    from . import _net

    return _net.classify_segments(model, [segment], arm_id, catalog)[0]


def build_verdict_table(model, segments: list[SegmentRecord], catalog: ArmCatalog) -> VerdictTable:
    """Evaluate every (segment, arm) pair and record correctness."""
    from . import _net

    bits: dict[str, list[bool]] = {seg.segment_id: [] for seg in segments}
    preds: dict[str, list[str]] = {seg.segment_id: [] for seg in segments}
    for arm in range(len(catalog)):
        classes = _net.classify_segments(model, segments, arm, catalog)
        for seg, cls in zip(segments, classes):
            bits[seg.segment_id].append(CLASS_NAMES[cls] == seg.label)
            preds[seg.segment_id].append(CLASS_NAMES[cls])
    return VerdictTable(
        n_arms=len(catalog),
        bits={sid: tuple(v) for sid, v in bits.items()},
        predictions={sid: tuple(v) for sid, v in preds.items()},
    )


def save_classifier(model, spec: ReducedClassifierSpec, path) -> None:
    from . import _net

    _net.save_model(model, spec, path)


def load_classifier(path):
    """Returns (model, spec); the round trip is parameter-exact."""
    from . import _net

    return _net.load_model(path)
