import numpy as np
import pytest

from app.errors import GeometryError, InvalidParameterError
from app.models import RawImage
from app.modules.robustness.perturb import (
    PerturbationKind,
    PerturbationSpec,
    apply,
    derive_seed,
    parse_perturb_flag,
    perturbation_grid,
)


@pytest.fixture
def image(rng):
    return RawImage(rng.uniform(0.2, 0.9, size=(224, 224, 3)))


def _mask(result, shape):
    mask = np.zeros(shape[:2], dtype=bool)
    for sq in result.squares:
        mask[sq.y:sq.y + sq.side, sq.x:sq.x + sq.side] = True
    return mask


def test_square_side():
    assert PerturbationSpec(kind='occlusion', divisor=4).side(224, 224) == 56
    assert PerturbationSpec(kind='noise', divisor=10).side(300, 224) == 22


def test_occlusion_is_black_and_local(image):
    result = apply(image, PerturbationSpec(kind=PerturbationKind.OCCLUSION, divisor=4, seed=3))
    (square,) = result.squares
    assert square.side == 56
    assert 0 <= square.x <= 224 - 56 and 0 <= square.y <= 224 - 56
    mask = _mask(result, image.pixels.shape)
    assert np.all(result.image.pixels[mask] == 0.0)
    assert np.array_equal(result.image.pixels[~mask], image.pixels[~mask])


def test_noise_is_uniform(image):
    result = apply(image, PerturbationSpec(kind=PerturbationKind.NOISE, divisor=4, seed=11))
    mask = _mask(result, image.pixels.shape)
    mean = result.image.pixels[mask].mean()
    assert 0.45 <= mean <= 0.55
    assert np.array_equal(result.image.pixels[~mask], image.pixels[~mask])


def test_seeded_determinism(image):
    spec = PerturbationSpec(kind='noise', divisor=6, count=3, seed=5)
    a, b = apply(image, spec), apply(image, spec)
    assert a.squares == b.squares
    assert np.array_equal(a.image.pixels, b.image.pixels)
    assert apply(image, spec, seed=derive_seed(5, 1)).squares != apply(image, spec, seed=derive_seed(5, 2)).squares


def test_occluded_fraction_bound(image):
    spec = PerturbationSpec(kind='occlusion', divisor=8, count=2, seed=1)
    result = apply(image, spec)
    fraction = _mask(result, image.pixels.shape).mean()
    assert fraction <= spec.count * (28 * 28) / (224 * 224) + 1e-12


def test_image_too_small():
    with pytest.raises(GeometryError):
        apply(RawImage(np.zeros((3, 3, 1))), PerturbationSpec(kind='occlusion', divisor=4))


def test_grid_order_and_size():
    grid = perturbation_grid([10, 8, 6, 4], [PerturbationKind.OCCLUSION, PerturbationKind.NOISE], [0])
    assert len(grid) == 8
    assert [(s.kind.value, s.divisor) for s in grid[:4]] == [('occlusion', n) for n in (10, 8, 6, 4)]
    assert {s.kind for s in grid} == {PerturbationKind.OCCLUSION, PerturbationKind.NOISE}
    assert [s.seed for s in perturbation_grid([4], ['noise'], [2, 1])] == [2, 1]


def test_grid_needs_values():
    with pytest.raises(InvalidParameterError):
        perturbation_grid([4], ['noise'], [])


def test_parse_flag():
    spec = parse_perturb_flag('kind=occlusion,n=4,count=1,seed=7')
    assert spec == PerturbationSpec(kind='occlusion', divisor=4, count=1, seed=7)
    assert parse_perturb_flag('kind=noise, n=10').seed == 0
    with pytest.raises(InvalidParameterError):
        parse_perturb_flag('kind=blur,n=4')
    with pytest.raises(InvalidParameterError):
        parse_perturb_flag('kind=noise,size=4')
    with pytest.raises(InvalidParameterError):
        parse_perturb_flag('kind=noise,n=1')
