"""
Domain Models
Immutable containers shared by every pipeline stage
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from app.errors import DimensionMismatchError, GeometryError, InvalidParameterError

NORM_TOL = 1e-6


class SourceTag(str, Enum):
    """Feature source model: scene structure, objects, or the whole image"""
    STRUCTURE = 'structure'
    OBJECT = 'object'
    GLOBAL = 'global'

    @property
    def code(self) -> int:
        return list(SourceTag).index(self)

    @classmethod
    def from_code(cls, code: int) -> 'SourceTag':
        return list(cls)[code]


def _frozen(array, dtype=np.float64):
    arr = np.array(array, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def l2_normalize(values: np.ndarray) -> np.ndarray:
    """Unit-norm copy of a vector; zero vectors pass through unchanged"""
    values = np.asarray(values, dtype=np.float64)
    norm = np.linalg.norm(values)
    if norm == 0.0:
        return values.copy()
    return values / norm


def l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise unit norm; zero rows pass through unchanged"""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.where(norms == 0.0, 1.0, norms)


# ============================================
# Geometry
# ============================================

@dataclass(frozen=True)
class ImageDims:
    """Image width and height in pixels"""
    width: int
    height: int

    MIN_SIDE = 8

    def __post_init__(self):
        if self.width < self.MIN_SIDE or self.height < self.MIN_SIDE:
            raise GeometryError(
                f"Image {self.width}x{self.height} is below the {self.MIN_SIDE}x{self.MIN_SIDE} minimum"
            )


@dataclass(frozen=True)
class PatchRect:
    """Sliding-window rectangle tagged with its scale"""
    x: int
    y: int
    w: int
    h: int
    scale_id: int

    def fits(self, width: int, height: int) -> bool:
        return (self.x >= 0 and self.y >= 0 and self.w > 0 and self.h > 0
                and self.x + self.w <= width and self.y + self.h <= height)


@dataclass(frozen=True, eq=False)
class RawImage:
    """Pixel array H x W x C with intensities in [0, 1]"""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.ndim != 3:
            raise GeometryError(f"Expected an H x W x C array, got shape {pixels.shape}")
        if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0 or not np.isfinite(pixels).all()):
            raise InvalidParameterError("Pixel intensities must lie in [0, 1]")
        object.__setattr__(self, 'pixels', _frozen(pixels))

    @property
    def dims(self) -> ImageDims:
        return ImageDims(width=self.pixels.shape[1], height=self.pixels.shape[0])

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def crop(self, rect: PatchRect) -> np.ndarray:
        height, width = self.pixels.shape[:2]
        if not rect.fits(width, height):
            raise GeometryError(f"{rect} lies outside image {width}x{height}")
        return self.pixels[rect.y:rect.y + rect.h, rect.x:rect.x + rect.w]

    def __repr__(self):
        return f'<RawImage {self.pixels.shape[1]}x{self.pixels.shape[0]}x{self.channels}>'


# ============================================
# Features
# ============================================

@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Descriptor of one patch (scale_id >= 1) or of the whole image (scale_id 0)"""
    values: np.ndarray
    source_tag: SourceTag
    scale_id: int = 0
    patch_index: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if values.size == 0:
            raise DimensionMismatchError("Feature vectors need at least one dimension")
        if not np.isfinite(values).all():
            raise InvalidParameterError("Feature vector contains non-finite values")
        object.__setattr__(self, 'values', _frozen(values))
        object.__setattr__(self, 'source_tag', SourceTag(self.source_tag))

    @property
    def dim(self) -> int:
        return self.values.size

    def normalized(self) -> 'FeatureVector':
        return FeatureVector(l2_normalize(self.values), self.source_tag, self.scale_id, self.patch_index)

    def __repr__(self):
        return f'<FeatureVector {self.source_tag.value} scale={self.scale_id} d={self.dim}>'


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Mean-centred projection onto the top principal directions"""
    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray

    def __post_init__(self):
        for name in ('mean', 'basis', 'explained_variance', 'explained_variance_ratio'):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.basis.ndim != 2 or self.basis.shape[0] != self.mean.size:
            raise DimensionMismatchError(f"PCA basis {self.basis.shape} does not match mean of size {self.mean.size}")
        if self.basis.shape[1] > self.basis.shape[0]:
            raise InvalidParameterError("PCA output dim cannot exceed its input dim")

    @property
    def input_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[1]

    def __repr__(self):
        return f'<PcaModel {self.input_dim}->{self.output_dim}>'


# ============================================
# Dictionary & Codes
# ============================================

@dataclass(frozen=True)
class ScaleBlock:
    """Column range [start, stop) of the dictionary learned from one scale"""
    scale_id: int
    start: int
    stop: int

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Unit-norm atom matrix d x K built from per-scale blocks"""
    atoms: np.ndarray
    scale_blocks: Tuple[ScaleBlock, ...]
    source_tag: SourceTag

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        if atoms.ndim != 2 or atoms.shape[1] == 0:
            raise DimensionMismatchError(f"Dictionary atoms must be a non-empty d x K matrix, got {atoms.shape}")
        blocks = tuple(self.scale_blocks)
        cursor = 0
        for block in blocks:
            if block.start != cursor or block.stop <= block.start:
                raise InvalidParameterError(f"Scale blocks do not partition the columns: {blocks}")
            cursor = block.stop
        if cursor != atoms.shape[1]:
            raise InvalidParameterError(f"Scale blocks cover {cursor} columns, dictionary has {atoms.shape[1]}")
        norms = np.linalg.norm(atoms, axis=0)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise InvalidParameterError("Dictionary atoms must have unit L2 norm")
        object.__setattr__(self, 'atoms', _frozen(atoms))
        object.__setattr__(self, 'scale_blocks', blocks)
        object.__setattr__(self, 'source_tag', SourceTag(self.source_tag))

    @property
    def dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def columns(self) -> int:
        return self.atoms.shape[1]

    def with_atoms(self, atoms: np.ndarray) -> 'Dictionary':
        return Dictionary(atoms, self.scale_blocks, self.source_tag)

    def quantized(self) -> 'Dictionary':
        """Atoms rounded to the float32 precision they are persisted with"""
        return self.with_atoms(self.atoms.astype(np.float32).astype(np.float64))

    def __repr__(self):
        return f'<Dictionary {self.source_tag.value} {self.dim}x{self.columns} blocks={len(self.scale_blocks)}>'


@dataclass(frozen=True, eq=False)
class SparseCode:
    """Sparse coefficient vector over the dictionary columns"""
    indices: np.ndarray
    coefficients: np.ndarray
    dict_columns: int

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).ravel()
        coefficients = np.asarray(self.coefficients, dtype=np.float64).ravel()
        if indices.size != coefficients.size:
            raise DimensionMismatchError("Sparse code indices and coefficients differ in length")
        if indices.size:
            if np.any(np.diff(indices) <= 0) or indices[0] < 0 or indices[-1] >= self.dict_columns:
                raise InvalidParameterError("Sparse code indices must be strictly increasing and in range")
            if not np.isfinite(coefficients).all() or np.any(coefficients == 0.0):
                raise InvalidParameterError("Sparse code coefficients must be finite and nonzero")
        object.__setattr__(self, 'indices', _frozen(indices, np.int64))
        object.__setattr__(self, 'coefficients', _frozen(coefficients))

    @property
    def nnz(self) -> int:
        return self.indices.size

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dict_columns)
        dense[self.indices] = self.coefficients
        return dense

    def __repr__(self):
        return f'<SparseCode nnz={self.nnz}/{self.dict_columns}>'


# ============================================
# Pooling & Scene Representation
# ============================================

@dataclass(frozen=True, eq=False)
class PooledRepresentation:
    """Per-scale max-pooled code vector"""
    values: np.ndarray
    scale_id: int
    source_tag: SourceTag

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.isfinite(values).all():
            raise InvalidParameterError("Pooled representation contains non-finite values")
        object.__setattr__(self, 'values', _frozen(values))
        object.__setattr__(self, 'source_tag', SourceTag(self.source_tag))

    def __repr__(self):
        return f'<PooledRepresentation {self.source_tag.value} scale={self.scale_id} k={self.values.size}>'


@dataclass(frozen=True)
class Segment:
    """Named slice of a scene representation"""
    name: str
    offset: int
    length: int

    @property
    def stop(self) -> int:
        return self.offset + self.length


@dataclass(frozen=True, eq=False)
class SceneRepresentation:
    """Unit-norm concatenation of the global and pooled local vectors"""
    values: np.ndarray
    layout: Tuple[Segment, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        layout = tuple(self.layout)
        cursor = 0
        for segment in layout:
            if segment.offset != cursor or segment.length <= 0:
                raise InvalidParameterError(f"Layout segments do not partition the vector: {layout}")
            cursor = segment.stop
        if cursor != values.size:
            raise DimensionMismatchError(f"Layout covers {cursor} entries, vector has {values.size}")
        object.__setattr__(self, 'values', _frozen(values))
        object.__setattr__(self, 'layout', layout)

    @property
    def dim(self) -> int:
        return self.values.size

    def segment(self, name: str) -> np.ndarray:
        for seg in self.layout:
            if seg.name == name:
                return self.values[seg.offset:seg.stop]
        raise KeyError(name)

    def __repr__(self):
        return f'<SceneRepresentation d={self.dim} segments={[s.name for s in self.layout]}>'


# ============================================
# Classification
# ============================================

@dataclass(frozen=True, eq=False)
class LabeledSet:
    """Representations n x D with integer labels"""
    representations: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        reps = np.asarray(self.representations, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if reps.ndim != 2 or reps.shape[0] != labels.size:
            raise DimensionMismatchError(f"{reps.shape} representations for {labels.size} labels")
        object.__setattr__(self, 'representations', _frozen(reps))
        object.__setattr__(self, 'labels', _frozen(labels, np.int64))

    def __len__(self):
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.representations.shape[1]


@dataclass(frozen=True, eq=False)
class LinearSvmModel:
    """One (w, b) pair per class for one-vs-rest decisions"""
    weights: np.ndarray
    biases: np.ndarray
    labels: np.ndarray
    C: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        biases = np.asarray(self.biases, dtype=np.float64).ravel()
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if weights.ndim != 2 or weights.shape[0] != biases.size or biases.size != labels.size:
            raise DimensionMismatchError("SVM weights, biases and labels disagree in class count")
        if not (np.isfinite(weights).all() and np.isfinite(biases).all()):
            raise InvalidParameterError("SVM parameters must be finite")
        object.__setattr__(self, 'weights', _frozen(weights))
        object.__setattr__(self, 'biases', _frozen(biases))
        object.__setattr__(self, 'labels', _frozen(labels, np.int64))

    @property
    def n_classes(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def __repr__(self):
        return f'<LinearSvmModel classes={self.n_classes} d={self.dim} C={self.C}>'


# ============================================
# Robustness
# ============================================

@dataclass(frozen=True)
class AppliedSquare:
    """Square written into an image by a perturbation"""
    x: int
    y: int
    side: int
    kind: str


@dataclass(frozen=True, eq=False)
class PerturbedImage:
    """Perturbed copy of an image with the squares applied to it"""
    image: RawImage
    squares: Tuple[AppliedSquare, ...] = field(default_factory=tuple)

    def __repr__(self):
        return f'<PerturbedImage {self.image!r} squares={len(self.squares)}>'


@dataclass(frozen=True)
class ManifestSample:
    """One dataset entry: image path or `row:<i>` reference, label and split"""
    ref: str
    label: int
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered classes and labelled samples with train/test membership"""
    classes: Tuple[str, ...]
    samples: Tuple[ManifestSample, ...]
    root: Optional[str] = None

    def split(self, name: str) -> List[ManifestSample]:
        return [s for s in self.samples if s.split == name]
