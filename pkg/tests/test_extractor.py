import numpy as np
import pytest

from app.errors import GeometryError
from app.models import PatchRect, RawImage, SourceTag
from app.modules.features.extractor import (
    BuiltinExtractor,
    ExtractorConfig,
    describe_pixels,
    extract_builtin,
    extract_image,
)
from app.modules.geometry.patch_grid import ScaleConfig


def test_flat_patch_has_no_gradient_energy():
    config = ExtractorConfig()
    values = describe_pixels(np.full((8, 8, 3), 0.3), config)
    gradient = values[:config.grid * config.grid * config.orientation_bins]
    intensity = values[config.grid * config.grid * config.orientation_bins:]
    assert np.all(gradient == 0.0)
    assert np.count_nonzero(intensity) == 1
    assert np.linalg.norm(values) == pytest.approx(1.0)


def test_vertical_step_edge_fills_horizontal_gradient_bin():
    config = ExtractorConfig(grid=1, orientation_bins=8, intensity_bins=4)
    block = np.zeros((4, 4, 1))
    block[:, 2:] = 1.0
    values = describe_pixels(block, config)
    orientation = values[:8]
    assert int(np.argmax(orientation)) == 0
    assert np.count_nonzero(orientation) == 1


def test_descriptor_is_translation_agnostic(rng):
    pixels = rng.random((32, 32, 3))
    content = pixels[4:12, 4:12].copy()
    pixels[20:28, 16:24] = content
    img = RawImage(pixels)
    a = extract_builtin(img, PatchRect(4, 4, 8, 8, 1))
    b = extract_builtin(img, PatchRect(16, 20, 8, 8, 1))
    assert np.array_equal(a.values, b.values)


def test_rect_outside_image_rejected(rng):
    img = RawImage(rng.random((16, 16, 3)))
    with pytest.raises(GeometryError):
        extract_builtin(img, PatchRect(10, 10, 8, 8, 1))


def test_dimension_matches_config():
    config = ExtractorConfig(grid=2, orientation_bins=6, intensity_bins=5)
    assert BuiltinExtractor(config).dimension == 2 * 2 * 6 + 5


def test_extract_image_layout(rng):
    img = RawImage(rng.random((32, 32, 3)))
    extractors = {
        SourceTag.STRUCTURE: BuiltinExtractor(),
        SourceTag.OBJECT: BuiltinExtractor(ExtractorConfig(grid=1, intensity_bins=16)),
    }
    features = extract_image(img, ScaleConfig(), extractors)
    assert features.global_vector.shape == (extractors[SourceTag.STRUCTURE].dimension,)
    assert features.local[SourceTag.STRUCTURE].shape == (58, 40)
    assert features.local[SourceTag.OBJECT].shape == (58, 24)
    assert features.scale_ids.tolist() == [1] * 9 + [2] * 49
    norms = np.linalg.norm(features.local[SourceTag.STRUCTURE], axis=1)
    assert np.allclose(norms, 1.0)
