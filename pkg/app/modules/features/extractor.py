"""
Feature Extraction
Builtin handcrafted descriptor (gradient-orientation grid + intensity histogram)
and the per-image extraction of global and local features
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.models import FeatureVector, PatchRect, RawImage, SourceTag, l2_normalize
from app.modules.geometry.patch_grid import ScaleConfig, multi_scale_patches

logger = logging.getLogger(__name__)


class ExtractorConfig(BaseModel):
    """Layout of the builtin descriptor"""
    model_config = ConfigDict(frozen=True)

    grid: int = Field(2, ge=1)
    orientation_bins: int = Field(8, ge=1)
    intensity_bins: int = Field(8, ge=1)
    gradient_weight: float = Field(1.0, ge=0.0)
    intensity_weight: float = Field(0.5, ge=0.0)

    @property
    def dimension(self) -> int:
        return self.grid * self.grid * self.orientation_bins + self.intensity_bins


# Default layouts per source: the structure extractor keeps a spatial grid,
# the object extractor pools orientations over the whole window with a finer
# intensity histogram.
DEFAULT_EXTRACTORS = {
    SourceTag.STRUCTURE: ExtractorConfig(),
    SourceTag.OBJECT: ExtractorConfig(grid=1, orientation_bins=8, intensity_bins=16),
}


class FeatureExtractor(Protocol):
    """Anything that maps an image window to a fixed-dimension descriptor"""

    @property
    def dimension(self) -> int: ...

    def extract(self, img: RawImage, rect: PatchRect, source_tag: SourceTag,
                patch_index: int = 0) -> FeatureVector: ...


def _grey(pixels: np.ndarray) -> np.ndarray:
    return pixels.mean(axis=2) if pixels.ndim == 3 else pixels


def _orientation_histogram(grey: np.ndarray, config: ExtractorConfig) -> np.ndarray:
    """Magnitude-weighted signed orientation histogram over a grid x grid layout"""
    h, w = grey.shape
    if h >= 2 and w >= 2:
        gy, gx = np.gradient(grey)
    else:
        gy, gx = np.zeros_like(grey), np.zeros_like(grey)
    magnitude = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    bin_width = 2.0 * np.pi / config.orientation_bins
    # bin 0 is centred on angle 0 (gradient pointing along +x)
    bins = np.floor((angle + bin_width / 2.0) / bin_width).astype(np.int64) % config.orientation_bins

    rows = np.minimum(np.arange(h) * config.grid // h, config.grid - 1)
    cols = np.minimum(np.arange(w) * config.grid // w, config.grid - 1)
    cell = rows[:, None] * config.grid + cols[None, :]
    flat_index = cell * config.orientation_bins + bins
    hist = np.bincount(flat_index.ravel(), weights=magnitude.ravel(),
                       minlength=config.grid * config.grid * config.orientation_bins)
    return hist


def _intensity_histogram(grey: np.ndarray, config: ExtractorConfig) -> np.ndarray:
    idx = np.minimum((grey * config.intensity_bins).astype(np.int64), config.intensity_bins - 1)
    return np.bincount(idx.ravel(), minlength=config.intensity_bins).astype(np.float64)


def describe_pixels(pixels: np.ndarray, config: ExtractorConfig) -> np.ndarray:
    """Descriptor of a pixel block; depends only on the block content"""
    grey = _grey(np.asarray(pixels, dtype=np.float64))
    gradient_part = l2_normalize(_orientation_histogram(grey, config)) * config.gradient_weight
    intensity_part = l2_normalize(_intensity_histogram(grey, config)) * config.intensity_weight
    return l2_normalize(np.concatenate([gradient_part, intensity_part]))


def extract_builtin(img: RawImage, rect: PatchRect, config: ExtractorConfig = None,
                    source_tag: SourceTag = SourceTag.STRUCTURE, patch_index: int = 0) -> FeatureVector:
    """L2-normalised builtin descriptor of one window; rect outside the image raises GeometryError"""
    config = config or DEFAULT_EXTRACTORS[SourceTag.STRUCTURE]
    block = img.crop(rect)
    return FeatureVector(describe_pixels(block, config), source_tag, rect.scale_id, patch_index)


class BuiltinExtractor:
    """FeatureExtractor backed by extract_builtin"""

    def __init__(self, config: ExtractorConfig = None):
        self.config = config or ExtractorConfig()

    @property
    def dimension(self) -> int:
        return self.config.dimension

    def extract(self, img, rect, source_tag, patch_index=0):
        return extract_builtin(img, rect, self.config, source_tag, patch_index)


@dataclass(frozen=True, eq=False)
class ImageFeatures:
    """Global vector plus local feature matrices (patches in canonical order) per source"""
    global_vector: np.ndarray
    local: Dict[SourceTag, np.ndarray]
    scale_ids: np.ndarray


def extract_image(img: RawImage, scales: ScaleConfig,
                  extractors: Dict[SourceTag, FeatureExtractor]) -> ImageFeatures:
    """Global descriptor of the whole image and one local descriptor per patch and source"""
    height, width = img.pixels.shape[:2]
    whole = PatchRect(x=0, y=0, w=width, h=height, scale_id=0)
    global_extractor = extractors.get(SourceTag.GLOBAL, extractors[SourceTag.STRUCTURE])
    global_vector = global_extractor.extract(img, whole, SourceTag.GLOBAL).values

    patches = multi_scale_patches(img.dims, scales)
    local: Dict[SourceTag, np.ndarray] = {}
    for tag in (SourceTag.STRUCTURE, SourceTag.OBJECT):
        extractor = extractors[tag]
        rows: List[np.ndarray] = [
            extractor.extract(img, rect, tag, patch_index=i).values for i, rect in enumerate(patches)
        ]
        local[tag] = np.vstack(rows)
    scale_ids = np.array([rect.scale_id for rect in patches], dtype=np.int64)
    return ImageFeatures(global_vector=global_vector, local=local, scale_ids=scale_ids)
