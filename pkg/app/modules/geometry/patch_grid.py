"""
Patch Grid
Multi-scale sliding-window geometry: window = dim / divisor, stride = window / 2
"""
import logging
from typing import List

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.errors import GeometryError, InvalidParameterError
from app.models import ImageDims, PatchRect

logger = logging.getLogger(__name__)

STRIDE_FRACTION = 0.5


class ScaleConfig(BaseModel):
    """Window divisors per scale; the stride is fixed to half the window"""
    model_config = ConfigDict(frozen=True)

    divisors: List[int] = Field(default_factory=lambda: [2, 4])
    stride_fraction: float = STRIDE_FRACTION

    @field_validator('divisors')
    @classmethod
    def _check_divisors(cls, value):
        if not value:
            raise ValueError('at least one scale divisor is required')
        if any(d < 2 for d in value):
            raise ValueError(f'every divisor must be >= 2, got {value}')
        return value

    @field_validator('stride_fraction')
    @classmethod
    def _check_stride(cls, value):
        if value != STRIDE_FRACTION:
            raise ValueError('stride is fixed to half of the window')
        return value

    @property
    def scale_ids(self) -> List[int]:
        return list(range(1, len(self.divisors) + 1))


def _window_and_stride(dims: ImageDims, divisor: int):
    if divisor < 2:
        raise InvalidParameterError(f"Scale divisor must be >= 2, got {divisor}")
    win_w, win_h = dims.width // divisor, dims.height // divisor
    stride_x, stride_y = win_w // 2, win_h // 2
    if min(win_w, win_h, stride_x, stride_y) < 1:
        raise GeometryError(
            f"Image {dims.width}x{dims.height} is too small for divisor {divisor}: "
            f"window {win_w}x{win_h}, stride {stride_x}x{stride_y}"
        )
    return win_w, win_h, stride_x, stride_y


def _offsets(extent: int, window: int, stride: int) -> range:
    return range(0, extent - window + 1, stride)


def generate_patches(dims: ImageDims, divisor: int, scale_id: int = 1) -> List[PatchRect]:
    """
    All windows of size dims/divisor at offsets 0, stride, 2*stride, ... that fit
    inside the image, row-major (y outer, x inner). Partial border windows are dropped.
    """
    win_w, win_h, stride_x, stride_y = _window_and_stride(dims, divisor)
    return [
        PatchRect(x=x, y=y, w=win_w, h=win_h, scale_id=scale_id)
        for y in _offsets(dims.height, win_h, stride_y)
        for x in _offsets(dims.width, win_w, stride_x)
    ]


def patch_count(dims: ImageDims, divisor: int) -> int:
    """Number of windows generate_patches would return"""
    win_w, win_h, stride_x, stride_y = _window_and_stride(dims, divisor)
    return len(_offsets(dims.width, win_w, stride_x)) * len(_offsets(dims.height, win_h, stride_y))


def multi_scale_patches(dims: ImageDims, scales: ScaleConfig) -> List[PatchRect]:
    """Canonical patch order used across the pipeline: scale 1 first, then scale 2, ..."""
    patches = []
    for scale_id, divisor in zip(scales.scale_ids, scales.divisors):
        patches.extend(generate_patches(dims, divisor, scale_id=scale_id))
    return patches


def scale_region_counts(dims: ImageDims, scales: ScaleConfig) -> List[int]:
    """Patch count per scale, in scale order"""
    return [patch_count(dims, divisor) for divisor in scales.divisors]
