"""
Synthetic Scenes
Procedural glyph-composition dataset: every class shares the same textured
background distribution and differs only by the small objects drawn on it.

Glyphs are bright and backgrounds stay inside a mid-grey band, so black
pixels never occur in clean scenes. The leading glyphs have diagonal edges
only; occluding squares share neither their edges nor their intensities.
"""
import logging
from pathlib import Path
from typing import Callable, Dict

import numpy as np

from app.errors import InvalidParameterError
from app.models import DatasetManifest, ManifestSample, RawImage
from app.modules.features.image_io import save_image
from app.modules.pipeline.manifest import save_manifest
from app.modules.robustness.perturb import derive_seed

logger = logging.getLogger(__name__)

GLYPH_SIZE = 14
GLYPHS_PER_IMAGE = 2
VARIANTS = ('objects', 'background')


def _diamond(u, v, r):
    return np.abs(u) + np.abs(v) <= r


def _saltire(u, v, r):
    return (np.abs(np.abs(u) - np.abs(v)) <= r * 0.25) & (np.abs(u) + np.abs(v) <= r * 1.2)


def _frame(u, v, r):
    l1 = np.abs(u) + np.abs(v)
    return (l1 <= r) & (l1 >= r * 0.55)


def _dots(u, v, r):
    mask = np.zeros(np.broadcast(u, v).shape, dtype=bool)
    for su in (-1, 1):
        for sv in (-1, 1):
            mask |= np.abs(u - su * r * 0.55) + np.abs(v - sv * r * 0.55) <= r * 0.4
    return mask


def _square(u, v, r):
    return (np.abs(u) <= r * 0.8) & (np.abs(v) <= r * 0.8)


def _disk(u, v, r):
    return u ** 2 + v ** 2 <= (r * 0.9) ** 2


def _bars(u, v, r):
    return (np.abs(u) <= r) & ((np.abs(v - r * 0.5) <= r * 0.2) | (np.abs(v + r * 0.5) <= r * 0.2))


def _cross(u, v, r):
    return ((np.abs(u) <= r * 0.25) & (np.abs(v) <= r)) | ((np.abs(v) <= r * 0.25) & (np.abs(u) <= r))


def _ring(u, v, r):
    d2 = u ** 2 + v ** 2
    return (d2 <= r ** 2) & (d2 >= (r * 0.55) ** 2)


# class order: the first four carry no axis-aligned edges
GLYPHS: Dict[str, Callable] = {
    'diamond': _diamond,
    'saltire': _saltire,
    'frame': _frame,
    'dots': _dots,
    'disk': _disk,
    'ring': _ring,
    'square': _square,
    'bars': _bars,
    'cross': _cross,
}

# clean pixels stay inside [BACKGROUND_FLOOR, 1]
BACKGROUND_FLOOR = 0.15
BACKGROUND_CEILING = 0.8


def _background(size: int, rng: np.random.Generator, base: float = None) -> np.ndarray:
    """Grey level, oriented stripes and pixel noise"""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    base = rng.uniform(0.4, 0.6) if base is None else base
    angle = rng.uniform(0.0, np.pi)
    period = rng.uniform(8.0, 16.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    stripes = 0.06 * np.sin(2 * np.pi * (x * np.cos(angle) + y * np.sin(angle)) / period + phase)
    canvas = base + stripes + rng.normal(0.0, 0.03, size=(size, size))
    return np.clip(canvas, BACKGROUND_FLOOR, BACKGROUND_CEILING)


def _draw(canvas: np.ndarray, glyph: Callable, rng: np.random.Generator):
    size = canvas.shape[0]
    r = GLYPH_SIZE / 2.0
    cx = rng.uniform(r + 1, size - r - 1)
    cy = rng.uniform(r + 1, size - r - 1)
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = glyph(x - cx, y - cy, r)
    canvas[mask] = rng.uniform(0.85, 1.0)


def render_scene(label: int, size: int, rng: np.random.Generator, variant: str = 'objects',
                 classes: int = 4) -> RawImage:
    """One RGB scene of class `label` out of `classes`"""
    names = list(GLYPHS)
    if variant == 'objects':
        canvas = _background(size, rng)
        glyph = GLYPHS[names[label]]
        for _ in range(GLYPHS_PER_IMAGE):
            _draw(canvas, glyph, rng)
    else:
        # classes differ only by the background grey level
        canvas = _background(size, rng, base=0.2 + 0.45 * label / max(1, classes - 1))
        for _ in range(GLYPHS_PER_IMAGE):
            _draw(canvas, GLYPHS[names[int(rng.integers(len(names)))]], rng)
    tint = 1.0 + rng.uniform(-0.05, 0.05, size=3)
    pixels = np.clip(canvas[:, :, None] * tint[None, None, :], 0.0, 1.0)
    return RawImage(pixels)


def generate_synthetic(out, classes: int = 4, size: int = 64, train: int = 50, test: int = 20,
                       seed: int = 0, variant: str = 'objects') -> DatasetManifest:
    """Write PNG scenes under out/<class>/ plus manifest.tsv and split.tsv"""
    if not 2 <= classes <= len(GLYPHS):
        raise InvalidParameterError(f"classes must lie in 2..{len(GLYPHS)}, got {classes}")
    if size < 4 * GLYPH_SIZE // 2 + 2:
        raise InvalidParameterError(f"Image size {size} is too small for {GLYPH_SIZE}px glyphs")
    if train < 1 or test < 0:
        raise InvalidParameterError("Need at least one training image per class")
    if variant not in VARIANTS:
        raise InvalidParameterError(f"Unknown variant {variant!r}; choose from {VARIANTS}")

    out = Path(out)
    class_names = tuple(list(GLYPHS)[:classes])
    samples = []
    image_index = 0
    for label, name in enumerate(class_names):
        for i in range(train + test):
            rng = np.random.default_rng(derive_seed(seed, image_index))
            image_index += 1
            split = 'train' if i < train else 'test'
            ref = f'{name}/{split}_{i:04d}.png'
            save_image(out / ref, render_scene(label, size, rng, variant, classes))
            samples.append(ManifestSample(ref=ref, label=label, split=split))

    manifest = DatasetManifest(classes=class_names, samples=tuple(samples), root=str(out.resolve()))
    save_manifest(manifest, out)
    logger.info(f"Generated {len(samples)} synthetic {variant} scenes ({classes} classes) in {out}")
    return manifest
