"""Pixel sampling and feature assembly for the classical learners.

Sampling pools N/2 burnt and N/2 unburnt pixels from the positive patches
plus an equal count of negative patches. Quotas divide evenly across patches
(remainder to the earliest, keeping manifest order authoritative); a patch
containing water must place at least 10% of its unburnt draw on water
(rounded up). Understocked strata contribute everything they have — the
shortfall is logged, never silently re-drawn elsewhere.

Feature schemas follow the three benchmark variants: All (pre/post bands,
pre/post indices, delta indices), dSI (delta indices only) and MI (the All
entries whose forest importance exceeds 0.01).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FitError
from .rasters import ALL_BANDS, BandId, BitemporalSample, balance_negatives
from .seeding import rng_for
from .spectral import (
    UNITEMPORAL,
    IndexKind,
    compute_index,
    delta_field,
)

log = logging.getLogger(__name__)

WATER_QUOTA = 0.10
VARIANTS = ("All", "MI", "dSI")


@dataclass(frozen=True)
class FeatureKey:
    """One column: a band in one epoch, an index in one epoch, or a delta index."""

    source: str  # "pre" | "post" | "delta"
    band: BandId | None = None
    index: IndexKind | None = None

    def __post_init__(self):
        if self.source not in ("pre", "post", "delta"):
            raise ConfigError(f"bad feature source {self.source!r}")
        if (self.band is None) == (self.index is None):
            raise ConfigError("feature key needs exactly one of band/index")
        if self.source == "delta" and self.index is None:
            raise ConfigError("delta features are index-valued")

    @property
    def label(self) -> str:
        tag = "d" if self.source == "delta" else self.source
        name = self.band.value if self.band is not None else self.index.value
        return f"{tag}:{name}"

    @classmethod
    def parse(cls, label: str) -> "FeatureKey":
        tag, _, name = label.partition(":")
        source = {"pre": "pre", "post": "post", "d": "delta"}.get(tag)
        if source is None or not name:
            raise ConfigError(f"bad feature label {label!r}")
        if name in BandId.__members__:
            if source == "delta":
                raise ConfigError(f"delta feature must name an index: {label!r}")
            return cls(source, band=BandId(name))
        return cls(source, index=IndexKind.parse(name))


@dataclass(frozen=True)
class FeatureSchema:
    variant: str
    entries: tuple[FeatureKey, ...]

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown schema variant {self.variant!r}")
        labels = [e.label for e in self.entries]
        if len(set(labels)) != len(labels):
            raise ConfigError("duplicate feature entries in schema")

    def __len__(self) -> int:
        return len(self.entries)

    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def to_text(self) -> str:
        return "\n".join([f"variant={self.variant}"] + self.labels()) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FeatureSchema":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("variant="):
            raise DataError("schema text must start with 'variant='")
        variant = lines[0].partition("=")[2]
        entries = tuple(FeatureKey.parse(ln) for ln in lines[1:])
        return cls(variant, entries)

    def save(self, path: str | Path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSchema":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def all_schema(bands: tuple[BandId, ...] = ALL_BANDS) -> FeatureSchema:
    """Bands per epoch, unitemporal indices per epoch, then all delta indices."""
    entries: list[FeatureKey] = []
    entries += [FeatureKey("pre", band=b) for b in bands]
    entries += [FeatureKey("post", band=b) for b in bands]
    entries += [FeatureKey("pre", index=k) for k in UNITEMPORAL]
    entries += [FeatureKey("post", index=k) for k in UNITEMPORAL]
    entries += [FeatureKey("delta", index=k) for k in UNITEMPORAL]
    entries += [
        FeatureKey("delta", index=IndexKind.RDNBR),
        FeatureKey("delta", index=IndexKind.RBR),
    ]
    return FeatureSchema("All", tuple(entries))


def dsi_schema() -> FeatureSchema:
    """Delta indices only."""
    entries = [FeatureKey("delta", index=k) for k in UNITEMPORAL]
    entries += [
        FeatureKey("delta", index=IndexKind.RDNBR),
        FeatureKey("delta", index=IndexKind.RBR),
    ]
    return FeatureSchema("dSI", tuple(entries))


def derive_mi_schema(schema: FeatureSchema, importances: np.ndarray) -> FeatureSchema:
    """Keep the entries whose importance is strictly greater than 0.01."""
    importances = np.asarray(importances, dtype=np.float64)
    if importances.shape != (len(schema),):
        raise DataError(
            f"importances length {importances.shape} != schema length {len(schema)}"
        )
    if (importances < 0).any():
        raise DataError("importances must be nonnegative")
    kept = tuple(e for e, w in zip(schema.entries, importances) if w > 0.01)
    return FeatureSchema("MI", kept)


@dataclass(frozen=True)
class PixelPosition:
    event_id: str
    row: int
    col: int
    label: int


def _allocate(total: int, parts: int) -> list[int]:
    """Even split, remainder to the earliest parts."""
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def _draw(rng: np.random.Generator, rows, cols, take: int) -> list[tuple[int, int]]:
    if take <= 0 or rows.size == 0:
        return []
    idx = rng.choice(rows.size, size=min(take, rows.size), replace=False)
    idx.sort()
    return [(int(rows[i]), int(cols[i])) for i in idx]


def sample_pixels(
    samples: list[BitemporalSample], n_pixels: int, seed: int
) -> list[PixelPosition]:
    """Balanced pixel positions: N/2 burnt + N/2 unburnt with the water quota."""
    if n_pixels <= 0 or n_pixels % 2:
        raise ConfigError(f"pixel budget must be positive and even, got {n_pixels}")
    positives = [s for s in samples if s.is_positive()]
    if not positives:
        raise FitError("sampling needs at least one patch with burnt pixels")
    pool = balance_negatives(samples, seed)

    half = n_pixels // 2
    burnt_quota = _allocate(half, len(positives))
    unburnt_quota = _allocate(half, len(pool))

    positions: list[PixelPosition] = []
    pos_index = 0
    for patch_i, s in enumerate(pool):
        rng = rng_for(seed, f"pixels/{s.event_id}")
        burnt_mask = s.truth.labels.astype(bool)
        water_mask = (
            s.water.astype(bool) if s.water is not None
            else np.zeros_like(burnt_mask)
        )

        if s.is_positive():
            want = burnt_quota[pos_index]
            pos_index += 1
            rows, cols = np.nonzero(burnt_mask)
            got = _draw(rng, rows, cols, want)
            if len(got) < want:
                log.warning(
                    "patch %s: burnt stratum %d short of quota %d",
                    s.event_id, rows.size, want,
                )
            positions += [PixelPosition(s.event_id, r, c, 1) for r, c in got]

        want_u = unburnt_quota[patch_i]
        unburnt_mask = ~burnt_mask
        w_rows, w_cols = np.nonzero(unburnt_mask & water_mask)
        l_rows, l_cols = np.nonzero(unburnt_mask & ~water_mask)
        stock = w_rows.size + l_rows.size
        take_u = min(want_u, stock)
        if take_u < want_u:
            log.warning(
                "patch %s: unburnt stratum %d short of quota %d",
                s.event_id, stock, want_u,
            )
        quota_w = math.ceil(WATER_QUOTA * take_u) if w_rows.size else 0
        take_w = min(quota_w, w_rows.size)
        take_l = min(take_u - take_w, l_rows.size)
        take_w += min(take_u - take_w - take_l, w_rows.size - take_w)

        got_w = _draw(rng, w_rows, w_cols, take_w)
        got_l = _draw(rng, l_rows, l_cols, take_l)
        positions += [PixelPosition(s.event_id, r, c, 0) for r, c in got_w + got_l]
    return positions


@dataclass
class FeatureDataset:
    schema: FeatureSchema
    x: np.ndarray  # (n, d) float32, NaN-free
    y: np.ndarray  # (n,) uint8
    provenance: list[PixelPosition]
    nan_counts: dict[str, int]


def _feature_plane(key: FeatureKey, sample: BitemporalSample) -> np.ndarray:
    if key.band is not None:
        patch = sample.pre if key.source == "pre" else sample.post
        return patch.band(key.band)
    if key.source == "delta":
        return delta_field(key.index, sample.pre, sample.post).values
    patch = sample.pre if key.source == "pre" else sample.post
    return compute_index(key.index, patch).values


def assemble_features(
    schema: FeatureSchema,
    samples: list[BitemporalSample],
    positions: list[PixelPosition],
) -> FeatureDataset:
    """Gather feature vectors at the given positions, pooling in sample order.

    NaN feature values become 0; how many were replaced is reported per
    feature in ``nan_counts``.
    """
    if len(schema) == 0:
        raise DataError(f"cannot assemble an empty {schema.variant} schema")
    by_event: dict[str, list[PixelPosition]] = {}
    for p in positions:
        by_event.setdefault(p.event_id, []).append(p)
    known = {s.event_id for s in samples}
    missing = set(by_event) - known
    if missing:
        raise DataError(f"positions reference unknown patches: {sorted(missing)[:3]}")

    blocks: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    provenance: list[PixelPosition] = []
    nan_counts = {label: 0 for label in schema.labels()}
    for s in samples:
        here = by_event.get(s.event_id)
        if not here:
            continue
        rows = np.array([p.row for p in here])
        cols = np.array([p.col for p in here])
        if rows.max() >= s.height or cols.max() >= s.width:
            raise DataError(f"position outside patch {s.event_id}")
        columns = []
        for key in schema.entries:
            plane = _feature_plane(key, s)
            vals = plane[rows, cols].astype(np.float32)
            bad = ~np.isfinite(vals)
            if bad.any():
                nan_counts[key.label] += int(bad.sum())
                vals = np.where(bad, np.float32(0.0), vals)
            columns.append(vals)
        blocks.append(np.stack(columns, axis=1))
        labels.append(np.array([p.label for p in here], dtype=np.uint8))
        provenance += here
    if not blocks:
        raise DataError("no positions matched the given samples")
    return FeatureDataset(
        schema=schema,
        x=np.concatenate(blocks, axis=0),
        y=np.concatenate(labels),
        provenance=provenance,
        nan_counts=nan_counts,
    )


def write_features(dataset: FeatureDataset, path: str | Path):
    """Delimited text: schema header line, column names, then one row per pixel."""
    lines = [f"# schema={dataset.schema.variant}"]
    lines.append(",".join(dataset.schema.labels() + ["label"]))
    for row, label in zip(dataset.x, dataset.y):
        cells = [repr(float(v)) for v in row]
        lines.append(",".join(cells + [str(int(label))]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
