"""Patch data model: bands, reflectance patches, bitemporal samples, tiling.

Reflectance is dimensionless surface reflectance stored as float32 in
[band][row][col] order. Ingestion clips outliers to a configurable ceiling
and cuts scenes into non-overlapping square tiles, dropping partial borders.
Inputs are assumed to be co-registered and already resampled to a common
ground sampling distance; no resampling happens here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DataError
from .seeding import rng_for

DEFAULT_CLIP_MAX = 1.0


class BandId(str, Enum):
    """Sentinel-2 bands usable in a patch (10m bands assumed resampled to 20m)."""

    B02 = "B02"
    B03 = "B03"
    B04 = "B04"
    B05 = "B05"
    B06 = "B06"
    B07 = "B07"
    B08 = "B08"
    B8A = "B8A"
    B11 = "B11"
    B12 = "B12"


ALL_BANDS: tuple[BandId, ...] = tuple(BandId)

SPLITS = ("train", "val", "test")


@dataclass
class RasterPatch:
    """Dense reflectance array with its band table, shaped (bands, height, width)."""

    bands: tuple[BandId, ...]
    data: np.ndarray

    def __post_init__(self):
        self.bands = tuple(BandId(b) for b in self.bands)
        if len(set(self.bands)) != len(self.bands):
            raise DataError(f"duplicate bands in patch: {[b.value for b in self.bands]}")
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != len(self.bands):
            raise DataError(
                f"patch data shape {self.data.shape} does not match {len(self.bands)} bands"
            )

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def band(self, band: BandId) -> np.ndarray:
        """The (height, width) plane for one band."""
        band = BandId(band)
        try:
            i = self.bands.index(band)
        except ValueError:
            raise DataError(f"band {band.value} not present in patch") from None
        return self.data[i]

    def has_band(self, band: BandId) -> bool:
        return BandId(band) in self.bands


@dataclass
class GroundTruthMask:
    """Binary burnt/unburnt labels, shaped (height, width), 1 = burnt."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise DataError(f"mask must be 2-D, got shape {self.labels.shape}")
        bad = set(np.unique(self.labels)) - {0, 1}
        if bad:
            raise DataError(f"mask labels must be 0/1, found {sorted(bad)}")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def positive_pixels(self) -> int:
        return int(self.labels.sum())


@dataclass
class BitemporalSample:
    """Pre/post patch pair with ground truth, the unit of training and evaluation."""

    pre: RasterPatch
    post: RasterPatch
    truth: GroundTruthMask
    water: np.ndarray | None = None
    event_id: str = ""
    split: str = "train"

    def __post_init__(self):
        if self.pre.bands != self.post.bands:
            raise DataError("pre and post patches carry different band lists")
        if self.pre.data.shape != self.post.data.shape:
            raise DataError(
                f"pre shape {self.pre.data.shape} != post shape {self.post.data.shape}"
            )
        if (self.truth.height, self.truth.width) != (self.pre.height, self.pre.width):
            raise DataError("truth mask dimensions do not match the patches")
        if self.water is not None:
            self.water = np.asarray(self.water, dtype=np.uint8)
            if self.water.shape != (self.pre.height, self.pre.width):
                raise DataError("water mask dimensions do not match the patches")
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")

    @property
    def height(self) -> int:
        return self.pre.height

    @property
    def width(self) -> int:
        return self.pre.width

    def is_positive(self) -> bool:
        return self.truth.positive_pixels() > 0


def clip_reflectance(data: np.ndarray, clip_max: float) -> np.ndarray:
    """Clip reflectance outliers into [0, clip_max]. Idempotent."""
    if clip_max <= 0:
        raise DataError(f"clip_max must be positive, got {clip_max}")
    return np.clip(data, 0.0, np.float32(clip_max))


def ingest_scene(
    pre: RasterPatch,
    post: RasterPatch,
    truth: GroundTruthMask,
    patch_size: int,
    clip_max: float = DEFAULT_CLIP_MAX,
    water: np.ndarray | None = None,
    event_id: str = "",
    split: str = "train",
) -> list[BitemporalSample]:
    """Cut a scene into non-overlapping patch_size tiles in row-major order.

    Border pixels beyond the last full tile are dropped. All reflectances are
    clipped to [0, clip_max]. Tile samples are named "<event_id>/r<i>c<j>".
    """
    for name, layer_h, layer_w in (
        ("post", post.height, post.width),
        ("truth", truth.height, truth.width),
    ):
        if (layer_h, layer_w) != (pre.height, pre.width):
            raise DataError(
                f"ingestion: {name} layer is {layer_h}x{layer_w}, "
                f"pre is {pre.height}x{pre.width}"
            )
    if water is not None and water.shape != (pre.height, pre.width):
        raise DataError("ingestion: water layer does not match scene dimensions")
    if pre.bands != post.bands:
        raise DataError("ingestion: pre and post band lists differ")
    if patch_size <= 0 or pre.height < patch_size or pre.width < patch_size:
        raise DataError(
            f"scene {pre.height}x{pre.width} smaller than patch size {patch_size}"
        )

    pre_data = clip_reflectance(pre.data, clip_max)
    post_data = clip_reflectance(post.data, clip_max)
    n_rows = pre.height // patch_size
    n_cols = pre.width // patch_size
    samples = []
    for i in range(n_rows):
        for j in range(n_cols):
            rs = slice(i * patch_size, (i + 1) * patch_size)
            cs = slice(j * patch_size, (j + 1) * patch_size)
            samples.append(
                BitemporalSample(
                    pre=RasterPatch(pre.bands, pre_data[:, rs, cs]),
                    post=RasterPatch(post.bands, post_data[:, rs, cs]),
                    truth=GroundTruthMask(truth.labels[rs, cs]),
                    water=None if water is None else water[rs, cs],
                    event_id=f"{event_id}/r{i}c{j}" if event_id else f"r{i}c{j}",
                    split=split,
                )
            )
    return samples


def balance_negatives(
    samples: list[BitemporalSample], seed: int
) -> list[BitemporalSample]:
    """All positive patches plus an equal, seeded, uniform draw of negatives.

    Positives keep their order; the negative draw preserves pool order too so
    the result is deterministic for a fixed seed.
    """
    positives = [s for s in samples if s.is_positive()]
    negatives = [s for s in samples if not s.is_positive()]
    if len(negatives) < len(positives):
        raise DataError(
            f"balance: {len(positives)} positive patches but only "
            f"{len(negatives)} negatives available"
        )
    if not positives:
        return []
    rng = rng_for(seed, "balance_negatives")
    picked = sorted(rng.choice(len(negatives), size=len(positives), replace=False))
    return positives + [negatives[i] for i in picked]
