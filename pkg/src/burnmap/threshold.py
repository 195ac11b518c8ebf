"""Global thresholding of delta-index fields.

A pixel is burnt iff its delta value is >= the threshold; NaN pixels are
always unburnt. The threshold is found by grid search on pooled training
pixels: 256 evenly spaced candidates between the 1st and 99th percentile of
the defined delta values, scored by burnt-class F1, ties resolved toward the
smallest candidate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FitError
from .metrics import ConfusionCounts, MetricReport, accumulate, compute_metrics
from .rasters import BitemporalSample
from .spectral import IndexKind, ScalarField, delta_field

GRID_STEPS = 256
_PERCENTILES = (1.0, 99.0)


@dataclass
class ThresholdModel:
    kind: IndexKind
    threshold: float
    grid_lo: float
    grid_hi: float
    grid_steps: int
    train_f1: float

    def __post_init__(self):
        if not self.grid_lo < self.grid_hi:
            raise FitError(f"grid lo {self.grid_lo} must be < hi {self.grid_hi}")
        if self.grid_steps < 2:
            raise FitError(f"grid needs >= 2 steps, got {self.grid_steps}")
        if not self.grid_lo <= self.threshold <= self.grid_hi:
            raise FitError(f"threshold {self.threshold} outside grid bounds")

    def to_text(self) -> str:
        return (
            f"kind={self.kind.value}\n"
            f"threshold={self.threshold!r}\n"
            f"grid_lo={self.grid_lo!r}\n"
            f"grid_hi={self.grid_hi!r}\n"
            f"grid_steps={self.grid_steps}\n"
            f"train_f1={self.train_f1!r}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "ThresholdModel":
        fields: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"threshold model line {lineno}: expected key=value")
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        try:
            return cls(
                kind=IndexKind.parse(fields["kind"]),
                threshold=float(fields["threshold"]),
                grid_lo=float(fields["grid_lo"]),
                grid_hi=float(fields["grid_hi"]),
                grid_steps=int(fields["grid_steps"]),
                train_f1=float(fields["train_f1"]),
            )
        except KeyError as exc:
            raise DataError(f"threshold model missing field {exc}") from None

    def save(self, path: str | Path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ThresholdModel":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def binarize(field: ScalarField, threshold: float) -> np.ndarray:
    """1 where value >= threshold, else 0; NaN compares unburnt."""
    with np.errstate(invalid="ignore"):
        return (field.values >= threshold).astype(np.uint8)


def candidate_grid(values: np.ndarray, steps: int = GRID_STEPS) -> np.ndarray:
    """Evenly spaced thresholds between the 1st and 99th percentile of the
    defined (non-NaN) values."""
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise FitError("no defined delta values to build a threshold grid from")
    lo, hi = np.percentile(finite.astype(np.float64), _PERCENTILES)
    if not lo < hi:
        raise FitError(f"degenerate delta distribution (lo=hi={lo})")
    return np.linspace(lo, hi, steps)


def _pool_deltas(
    kind: IndexKind, samples: list[BitemporalSample]
) -> tuple[np.ndarray, np.ndarray]:
    values = []
    labels = []
    for s in samples:
        values.append(delta_field(kind, s.pre, s.post).values.ravel())
        labels.append(s.truth.labels.ravel())
    return np.concatenate(values), np.concatenate(labels)


def fit_threshold(
    kind: IndexKind, samples: list[BitemporalSample], steps: int = GRID_STEPS
) -> ThresholdModel:
    """Grid-search the burnt-F1-optimal global threshold on pooled train pixels.

    Equivalent to scoring binarize() at every grid point; implemented with one
    sort + cumulative counts so the scan is O((n + steps) log n).
    """
    if not samples:
        raise FitError("no training samples")
    values, labels = _pool_deltas(kind, samples)
    total_burnt = int(labels.sum())
    if total_burnt == 0 or total_burnt == labels.size:
        raise FitError("training pixels contain a single class; cannot fit")

    grid = candidate_grid(values, steps)

    finite = np.isfinite(values)
    v = values[finite]
    lab = labels[finite].astype(np.int64)
    order = np.argsort(v, kind="stable")
    v_sorted = v[order]
    lab_sorted = lab[order]
    # burnt_at_or_after[i] = burnt pixels among v_sorted[i:]
    burnt_suffix = np.concatenate([np.cumsum(lab_sorted[::-1])[::-1], [0]])

    first_ge = np.searchsorted(v_sorted, grid, side="left")
    tp = burnt_suffix[first_ge].astype(np.float64)
    predicted = (v_sorted.size - first_ge).astype(np.float64)
    fp = predicted - tp
    fn = total_burnt - tp
    # Same arithmetic as metrics.compute_metrics so the recorded F1 is
    # bit-identical to re-scoring the fitted model through binarize().
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        rec = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(prec + rec > 0, 2.0 * prec * rec / (prec + rec), 0.0)

    best = int(np.argmax(f1))  # first occurrence = smallest threshold on ties
    return ThresholdModel(
        kind=kind,
        threshold=float(grid[best]),
        grid_lo=float(grid[0]),
        grid_hi=float(grid[-1]),
        grid_steps=steps,
        train_f1=float(f1[best]),
    )


def apply_threshold(model: ThresholdModel, sample: BitemporalSample) -> np.ndarray:
    """Binary burnt mask for one sample under a fitted model."""
    return binarize(delta_field(model.kind, sample.pre, sample.post), model.threshold)


def evaluate_threshold(
    model: ThresholdModel, samples: list[BitemporalSample]
) -> tuple[ConfusionCounts, MetricReport]:
    """Pooled-pixel evaluation of a fitted model over a sample list."""
    counts = ConfusionCounts()
    for s in samples:
        counts = counts + accumulate(apply_threshold(model, s), s.truth.labels)
    return counts, compute_metrics(counts)
