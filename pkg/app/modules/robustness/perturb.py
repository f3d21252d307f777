"""
Perturbations
Randomly placed black squares (occlusion) and granular-noise squares of side min(W, H) / n
"""
import logging
from enum import Enum
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.errors import GeometryError, InvalidParameterError
from app.models import AppliedSquare, PerturbedImage, RawImage

logger = logging.getLogger(__name__)

DEFAULT_DIVISORS = (10, 8, 6, 4)


class PerturbationKind(str, Enum):
    OCCLUSION = 'occlusion'
    NOISE = 'noise'


DEFAULT_KINDS = (PerturbationKind.OCCLUSION, PerturbationKind.NOISE)


class PerturbationSpec(BaseModel):
    """`count` squares of side floor(min(W, H) / divisor)"""
    model_config = ConfigDict(frozen=True)

    kind: PerturbationKind
    divisor: int = Field(..., ge=2)
    count: int = Field(1, ge=1)
    seed: int = 0

    def side(self, width: int, height: int) -> int:
        side = min(width, height) // self.divisor
        if side < 1:
            raise GeometryError(f"Image {width}x{height} is too small for squares of W/{self.divisor}")
        return side

    @property
    def label(self) -> str:
        return f"{self.kind.value} W/{self.divisor}"


def derive_seed(seed: int, image_index: int) -> int:
    """Per-image seed: fixed hash of (seed, image index)"""
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(image_index)]).generate_state(1)[0])


def apply(img: RawImage, spec: PerturbationSpec, seed: int = None) -> PerturbedImage:
    """
    Write the squares into a copy of the image; pixels outside them are untouched.
    Top-left corners are uniform over valid offsets, drawn from `seed` (default spec.seed).
    """
    height, width = img.pixels.shape[:2]
    side = spec.side(width, height)
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    pixels = img.pixels.copy()
    squares = []
    for _ in range(spec.count):
        x = int(rng.integers(0, width - side + 1))
        y = int(rng.integers(0, height - side + 1))
        if spec.kind == PerturbationKind.OCCLUSION:
            pixels[y:y + side, x:x + side, :] = 0.0
        else:
            pixels[y:y + side, x:x + side, :] = rng.random((side, side, img.channels))
        squares.append(AppliedSquare(x=x, y=y, side=side, kind=spec.kind.value))
    return PerturbedImage(image=RawImage(pixels), squares=tuple(squares))


def perturbation_grid(divisors: Sequence[int] = DEFAULT_DIVISORS,
                      kinds: Sequence[PerturbationKind] = DEFAULT_KINDS,
                      seeds: Sequence[int] = (0,), count: int = 1) -> List[PerturbationSpec]:
    """One spec per (kind, divisor, seed), in that nesting order"""
    for name, values in (('divisors', divisors), ('kinds', kinds), ('seeds', seeds)):
        if not values:
            raise InvalidParameterError(f"Perturbation grid needs at least one of {name}")
    try:
        return [
            PerturbationSpec(kind=kind, divisor=divisor, count=count, seed=seed)
            for kind in kinds for divisor in divisors for seed in seeds
        ]
    except ValidationError as e:
        raise InvalidParameterError(f"Invalid perturbation grid: {e}") from e


_FLAG_KEYS = {'kind': 'kind', 'n': 'divisor', 'divisor': 'divisor', 'count': 'count', 'seed': 'seed'}


def parse_perturb_flag(text: str) -> PerturbationSpec:
    """`kind=occlusion,n=4,count=1,seed=7` -> PerturbationSpec"""
    fields = {}
    for item in filter(None, (part.strip() for part in text.split(','))):
        key, sep, value = item.partition('=')
        key = key.strip()
        if not sep or key not in _FLAG_KEYS:
            raise InvalidParameterError(f"Bad perturbation option {item!r}; expected kind=, n=, count=, seed=")
        fields[_FLAG_KEYS[key]] = value.strip()
    try:
        return PerturbationSpec(**fields)
    except ValidationError as e:
        raise InvalidParameterError(f"Invalid perturbation {text!r}: {e.errors()[0]['msg']}") from e
