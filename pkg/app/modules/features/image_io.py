"""
Image I/O
Pillow-backed loading and saving of RawImage
"""
import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from app.errors import DataError
from app.models import RawImage

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {'.png', '.jpg', '.jpeg', '.bmp', '.gif', '.tif', '.tiff'}


def load_image(path) -> RawImage:
    """Read an image file as RGB intensities in [0, 1]"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Image not found: {path}")
    try:
        with Image.open(path) as im:
            pixels = np.asarray(im.convert('RGB'), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"Cannot decode image {path}: {e}") from e
    return RawImage(pixels)


def save_image(path, img: RawImage):
    """Write an image as 8-bit PNG (or whatever the suffix selects)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    if pixels.shape[2] == 1:
        Image.fromarray(pixels[:, :, 0]).save(path)
    else:
        Image.fromarray(np.ascontiguousarray(pixels[:, :, :3])).save(path)


def is_image_file(path) -> bool:
    return Path(path).suffix.lower() in IMAGE_EXTENSIONS
