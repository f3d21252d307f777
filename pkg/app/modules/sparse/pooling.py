"""
Pooling & Scene Representation
Per-scale max pooling of code matrices and assembly of the normalised concatenation
"""
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from app.errors import (
    ArtifactError,
    DataError,
    DimensionMismatchError,
    EmptyInputError,
    InvalidParameterError,
)
from app.models import (
    FeatureVector,
    PooledRepresentation,
    SceneRepresentation,
    Segment,
    SourceTag,
    l2_normalize,
)
from app.modules.features.feature_io import read_feature_file, write_feature_file
from app.modules.sparse.sparse_config import PoolingMode
from app.utils.storage import atomic_write_json

logger = logging.getLogger(__name__)

GLOBAL_SEGMENT = 'global'
LOCAL_SOURCES = (SourceTag.STRUCTURE, SourceTag.OBJECT)

CodeMatrix = Union[np.ndarray, sparse.spmatrix]


def segment_name(source_tag: SourceTag, scale_id: int) -> str:
    return f"{SourceTag(source_tag).value}_s{scale_id}"


def segment_names(scale_ids: Sequence[int]) -> List[str]:
    """global, structure per scale, object per scale"""
    return [GLOBAL_SEGMENT] + [segment_name(tag, s) for tag in LOCAL_SOURCES for s in scale_ids]


# ============================================
# Max pooling
# ============================================

def max_pool(X: CodeMatrix, mode: PoolingMode = PoolingMode.ABSOLUTE, scale_id: int = 0,
             source_tag: SourceTag = SourceTag.STRUCTURE) -> PooledRepresentation:
    """f_j = max_i |X_ij| (signed mode: max_i X_ij)"""
    if X.shape[0] == 0:
        raise EmptyInputError(f"Nothing to pool for {SourceTag(source_tag).value} scale {scale_id}")
    if sparse.issparse(X):
        X = sparse.csr_matrix(X)
        source = abs(X) if mode == PoolingMode.ABSOLUTE else X
        pooled = source.max(axis=0).toarray().ravel()
    else:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        pooled = (np.abs(X) if mode == PoolingMode.ABSOLUTE else X).max(axis=0)
    return PooledRepresentation(pooled, scale_id, source_tag)


def pool_by_scale(X: CodeMatrix, scale_ids: Sequence[int], mode: PoolingMode = PoolingMode.ABSOLUTE,
                  source_tag: SourceTag = SourceTag.STRUCTURE,
                  scales: Optional[Sequence[int]] = None) -> List[PooledRepresentation]:
    """Group code rows by the scale of their patch and pool each group over the full dictionary"""
    scale_ids = np.asarray(scale_ids)
    if scale_ids.size != X.shape[0]:
        raise DimensionMismatchError(f"{X.shape[0]} code rows but {scale_ids.size} scale ids")
    scales = list(scales) if scales is not None else sorted(set(scale_ids.tolist()))
    if sparse.issparse(X):
        X = sparse.csr_matrix(X)
    return [max_pool(X[np.flatnonzero(scale_ids == s)], mode, s, source_tag) for s in scales]


# ============================================
# Assembly
# ============================================

def _global_values(global_vector) -> np.ndarray:
    if isinstance(global_vector, FeatureVector):
        return global_vector.values
    return np.asarray(global_vector, dtype=np.float64).ravel()


def assemble(global_vector: Union[FeatureVector, np.ndarray], pooled: Iterable[PooledRepresentation],
             layout: Optional[Sequence[Segment]] = None) -> SceneRepresentation:
    """
    Normalise the global vector and every pooled vector, concatenate them as
    global, structure x scales, object x scales, and normalise the result.
    When `layout` is given the segments must match it exactly.
    """
    by_name: Dict[str, np.ndarray] = {}
    for p in pooled:
        name = segment_name(p.source_tag, p.scale_id)
        if name in by_name:
            raise InvalidParameterError(f"Duplicate pooled segment {name}")
        by_name[name] = p.values
    scale_ids = sorted({int(n.rsplit('_s', 1)[1]) for n in by_name})
    names = segment_names(scale_ids)
    missing = [n for n in names[1:] if n not in by_name]
    if missing or len(by_name) != len(names) - 1:
        raise InvalidParameterError(f"Pooled vectors missing segments {missing}")
    by_name[GLOBAL_SEGMENT] = _global_values(global_vector)

    if layout is not None:
        expected = [(s.name, s.length) for s in layout]
        found = [(n, by_name[n].size) for n in names]
        if expected != found:
            raise DimensionMismatchError(f"Segments {found} do not match the model layout {expected}")

    parts = [l2_normalize(by_name[n]) for n in names]
    values = np.concatenate(parts)
    norm = np.linalg.norm(values)
    if norm == 0.0:
        raise DataError("Scene representation is all zeros")
    return SceneRepresentation(values / norm, build_layout(names, [p.size for p in parts]))


def build_layout(names: Sequence[str], lengths: Sequence[int]) -> Tuple[Segment, ...]:
    segments, offset = [], 0
    for name, length in zip(names, lengths):
        segments.append(Segment(name, offset, int(length)))
        offset += int(length)
    return tuple(segments)


def select_segments(rep: SceneRepresentation, names: Sequence[str]) -> SceneRepresentation:
    """Sub-representation built from the named segments, re-normalised"""
    names = list(names)
    unknown = [n for n in names if n not in {s.name for s in rep.layout}]
    if unknown:
        raise InvalidParameterError(f"Unknown segments {unknown}")
    ordered = [s for s in rep.layout if s.name in names]
    values = np.concatenate([rep.values[s.offset:s.stop] for s in ordered])
    norm = np.linalg.norm(values)
    if norm == 0.0:
        raise DataError(f"Segments {names} are all zeros")
    return SceneRepresentation(values / norm, build_layout([s.name for s in ordered], [s.length for s in ordered]))


def select_matrix(R: np.ndarray, layout: Sequence[Segment], names: Sequence[str]) -> np.ndarray:
    """select_segments applied to every row of a representation matrix"""
    known = {s.name for s in layout}
    unknown = [n for n in names if n not in known]
    if unknown:
        raise InvalidParameterError(f"Unknown segments {unknown}")
    R = np.asarray(R, dtype=np.float64)
    selected = np.hstack([R[:, s.offset:s.stop] for s in layout if s.name in names])
    norms = np.linalg.norm(selected, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DataError(f"Segments {list(names)} are all zeros for row {int(np.flatnonzero(norms[:, 0] == 0.0)[0])}")
    return selected / norms


def local_segment_names(layout: Sequence[Segment]) -> List[str]:
    return [s.name for s in layout if s.name != GLOBAL_SEGMENT]


# ============================================
# Persistence (SSRF + layout sidecar)
# ============================================

def layout_to_dict(layout: Sequence[Segment]) -> dict:
    return {
        'dim': sum(s.length for s in layout),
        'segments': [{'name': s.name, 'offset': s.offset, 'length': s.length} for s in layout],
    }


def layout_from_dict(data: dict) -> Tuple[Segment, ...]:
    try:
        layout = tuple(Segment(str(s['name']), int(s['offset']), int(s['length'])) for s in data['segments'])
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactError(f"Malformed layout descriptor: {e}") from e
    if sum(s.length for s in layout) != data.get('dim'):
        raise ArtifactError("Layout descriptor dimension does not match its segments")
    return layout


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + '.layout.json')


def save_layout(path, layout: Sequence[Segment]):
    atomic_write_json(path, layout_to_dict(layout))


def load_layout(path) -> Tuple[Segment, ...]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"Layout descriptor not found: {path}")
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{path}: invalid JSON: {e}") from e
    return layout_from_dict(data)


def save_representations(path, reps: Sequence[SceneRepresentation]):
    """n x D matrix as SSRF next to a `.layout.json` sidecar"""
    if not reps:
        raise EmptyInputError("No representations to save")
    layout = reps[0].layout
    if any(r.layout != layout for r in reps):
        raise DimensionMismatchError("Representations do not share one layout")
    write_feature_file(path, np.vstack([r.values for r in reps]))
    save_layout(sidecar_path(path), layout)


def load_representations(path) -> Tuple[np.ndarray, Tuple[Segment, ...]]:
    layout = load_layout(sidecar_path(path))
    matrix = read_feature_file(path)
    if matrix.shape[1] != sum(s.length for s in layout):
        raise DimensionMismatchError(f"{path}: {matrix.shape[1]} columns, layout expects {sum(s.length for s in layout)}")
    return matrix, layout
