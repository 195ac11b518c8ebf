"""burnmap: bitemporal burnt-area mapping from Sentinel-2 patch pairs.

Spectral-index baselines with global thresholding, pixel classifiers
(random forest, MLP) on engineered features, and a Siamese encoder-decoder
change-detection network, all on a small numpy-only stack.
"""

from .errors import (
    BurnmapError,
    ConfigError,
    DataError,
    DivergenceError,
    FitError,
    FormatError,
)
from .rasters import (
    ALL_BANDS,
    BandId,
    BitemporalSample,
    GroundTruthMask,
    RasterPatch,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_BANDS",
    "BandId",
    "BitemporalSample",
    "BurnmapError",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "FitError",
    "FormatError",
    "GroundTruthMask",
    "RasterPatch",
    "__version__",
]
