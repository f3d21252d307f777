"""
Dictionary Learning
k-means initial dictionary per scale, then alternating minimisation of
J = (1/n) sum ||y - Dx||^2 + lambda_dl ||x||_1 with unit-norm atoms
"""
import logging
import math
import struct
from typing import Dict, List, Sequence, Tuple

import numpy as np

from app.errors import (
    DimensionMismatchError,
    EmptyInputError,
    InvalidParameterError,
    NumericalError,
    UnsupportedFormatError,
)
from app.models import Dictionary, ScaleBlock, SourceTag
from app.modules.sparse.coding import coordinate_descent
from app.modules.sparse.kmeans import kmeans
from app.modules.sparse.sparse_config import DictLearnConfig, KmeansConfig
from app.utils.storage import BinaryReader, atomic_write_bytes, pack_fingerprint, read_artifact

logger = logging.getLogger(__name__)

# Words per source dictionary for the benchmark datasets
WORD_PRESETS: Dict[str, int] = {
    'scene15': 2175,
    'mit67': 3886,
    'sun397': 6907,
    'synthetic': 116,
}

SSRD_MAGIC = b'SSRD'
SSRD_VERSION = 1


# ============================================
# Initial dictionary
# ============================================

def split_words(total: int, region_counts: Sequence[int]) -> List[int]:
    """
    Split `total` dictionary columns between scales in proportion to the number of
    regions each scale extracts. Floors per scale, remainder on the last one.
    """
    if not region_counts:
        raise InvalidParameterError("At least one scale is needed to split dictionary words")
    if any(c <= 0 for c in region_counts):
        raise InvalidParameterError(f"Region counts must be positive, got {list(region_counts)}")
    regions = sum(region_counts)
    words = [math.floor(total * c / regions) for c in region_counts[:-1]]
    words.append(total - sum(words))
    if any(w < 1 for w in words):
        raise InvalidParameterError(f"{total} words cannot give every scale an atom ({words})")
    return words


def _unit_columns(centroids: np.ndarray, features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(centroids, axis=1)
    degenerate = np.flatnonzero(norms == 0.0)
    if degenerate.size:
        logger.warning(f"{degenerate.size} zero centroids replaced by the largest-norm sample")
        centroids = centroids.copy()
        centroids[degenerate] = features[np.argmax(np.linalg.norm(features, axis=1))]
        norms = np.linalg.norm(centroids, axis=1)
    return (centroids / norms[:, None]).T


def build_initial_dictionary(per_scale_features: Sequence[Tuple[int, np.ndarray]],
                             per_scale_k: Sequence[int],
                             source_tag: SourceTag = SourceTag.STRUCTURE,
                             kmeans_config: KmeansConfig = None) -> Dictionary:
    """D0 = [K_1, ..., K_c]: normalised k-means centroids of each scale, in scale order"""
    if len(per_scale_features) != len(per_scale_k):
        raise InvalidParameterError(
            f"{len(per_scale_features)} feature scales but {len(per_scale_k)} cluster counts"
        )
    if not per_scale_features:
        raise EmptyInputError("No scales to build a dictionary from")
    template = kmeans_config or KmeansConfig(k=1)
    dims = {np.asarray(m).shape[1] for _, m in per_scale_features}
    if len(dims) != 1:
        raise DimensionMismatchError(f"Scales disagree on feature dimension: {sorted(dims)}")
    (d,) = dims

    blocks, columns = [], []
    start = 0
    for (scale_id, features), k in zip(per_scale_features, per_scale_k):
        features = np.asarray(features, dtype=np.float64)
        centroids = kmeans(features, template.model_copy(update={'k': int(k)}))
        columns.append(_unit_columns(centroids, features))
        blocks.append(ScaleBlock(scale_id=scale_id, start=start, stop=start + int(k)))
        start += int(k)

    atoms = np.hstack(columns)
    if atoms.shape[1] < 2 * d:
        logger.warning(
            f"Dictionary for {SourceTag(source_tag).value} has {atoms.shape[1]} columns for dimension {d}; "
            f"fewer than 2*d is not over-complete"
        )
    logger.info(f"Initial {SourceTag(source_tag).value} dictionary {d}x{atoms.shape[1]} blocks={[b.size for b in blocks]}")
    return Dictionary(atoms, tuple(blocks), source_tag)


# ============================================
# Alternating minimisation
# ============================================

def objective(atoms: np.ndarray, Y: np.ndarray, codes: np.ndarray, lambda_dl: float) -> float:
    """J = (1/n) sum_i ||y_i - D x_i||^2 + lambda_dl ||x_i||_1"""
    residual = Y - codes @ atoms.T
    return float((np.einsum('ij,ij->', residual, residual) + lambda_dl * np.abs(codes).sum()) / Y.shape[0])


def sparse_codes(atoms: np.ndarray, Y: np.ndarray, lambda_dl: float, cfg: DictLearnConfig,
                 init: np.ndarray = None) -> np.ndarray:
    """Codes minimising ||y - Dx||^2 + lambda_dl ||x||_1, i.e. the LASSO with lambda_dl / 2"""
    codes, _ = coordinate_descent(
        atoms.T @ atoms, Y @ atoms, lambda_dl / 2.0,
        init=init, max_sweeps=cfg.inner_sweeps, tol=cfg.inner_tol,
    )
    return codes


def update_atoms(atoms: np.ndarray, Y: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """One block-coordinate pass; each atom gets its exact minimiser on the unit sphere"""
    A = codes.T @ codes
    B = Y.T @ codes
    atoms = atoms.copy()
    for j in range(atoms.shape[1]):
        if A[j, j] <= 0.0:
            continue
        u = B[:, j] - atoms @ A[:, j] + atoms[:, j] * A[j, j]
        norm = np.linalg.norm(u)
        if norm == 0.0:
            continue
        atoms[:, j] = u / norm
    return atoms


def replace_dead_atoms(D: Dictionary, Y: np.ndarray, usage: np.ndarray, codes: np.ndarray,
                       rng: np.random.Generator = None) -> Dictionary:
    """
    Replace every atom with zero usage by a distinct worst-reconstructed sample,
    normalised. Samples are taken by decreasing residual; ties go to the lowest
    index, or to a random order drawn from `rng`.
    """
    usage = np.asarray(usage)
    dead = np.flatnonzero(usage == 0)
    if dead.size == 0:
        return D
    Y = np.asarray(Y, dtype=np.float64)
    residual = Y - np.asarray(codes) @ D.atoms.T
    errors = np.einsum('ij,ij->i', residual, residual)
    tie_break = np.arange(errors.size) if rng is None else rng.permutation(errors.size)
    order = np.lexsort((tie_break, -errors))
    candidates = [i for i in order if np.linalg.norm(Y[i]) > 0.0]

    atoms = D.atoms.copy()
    replaced = 0
    for j, i in zip(dead, candidates):
        atoms[:, j] = Y[i] / np.linalg.norm(Y[i])
        replaced += 1
    if replaced < dead.size:
        logger.warning(f"Only {replaced} of {dead.size} dead atoms could be replaced")
    logger.debug(f"Replaced {replaced} dead atoms of the {D.source_tag.value} dictionary")
    return D.with_atoms(atoms)


def learn(D0: Dictionary, Y: np.ndarray, cfg: DictLearnConfig = None) -> Tuple[Dictionary, List[float]]:
    """
    Alternate atom updates (codes fixed) and coordinate-descent coding (dictionary fixed).
    trace[0] is J at D0, then one value per epoch; the trace is non-increasing.
    """
    cfg = cfg or DictLearnConfig()
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise EmptyInputError("Dictionary learning needs a non-empty n x d matrix")
    if Y.shape[1] != D0.dim:
        raise DimensionMismatchError(f"Samples have dimension {Y.shape[1]}, dictionary atoms have {D0.dim}")
    if not np.isfinite(Y).all():
        raise NumericalError("Dictionary learning input contains non-finite values")

    D = D0
    rng = np.random.default_rng(cfg.seed)
    codes = sparse_codes(D.atoms, Y, cfg.lambda_dl, cfg)
    trace = [_checked_objective(D.atoms, Y, codes, cfg.lambda_dl, epoch=0)]
    logger.info(f"Dictionary {D.source_tag.value} {D.dim}x{D.columns} n={Y.shape[0]}: J(D0)={trace[0]:.6g}")

    for epoch in range(1, cfg.epochs + 1):
        D = D.with_atoms(update_atoms(D.atoms, Y, codes))
        dead = 0
        if cfg.replace_dead_atoms:
            usage = np.count_nonzero(codes, axis=0)
            dead = int(np.sum(usage == 0))
            if dead:
                D = replace_dead_atoms(D, Y, usage, codes, rng)
        codes = sparse_codes(D.atoms, Y, cfg.lambda_dl, cfg, init=codes)
        trace.append(_checked_objective(D.atoms, Y, codes, cfg.lambda_dl, epoch=epoch))
        logger.info(f"Dictionary epoch {epoch}/{cfg.epochs}: J={trace[-1]:.6g} dead_atoms={dead}")

    return D, trace


def _checked_objective(atoms, Y, codes, lambda_dl, epoch) -> float:
    value = objective(atoms, Y, codes, lambda_dl)
    if not math.isfinite(value):
        logger.error(f"Dictionary objective became non-finite at epoch {epoch}")
        raise NumericalError(f"Non-finite dictionary objective at epoch {epoch} (lambda_dl={lambda_dl})")
    return value


# ============================================
# Persistence (SSRD)
# ============================================

def encode_dictionary(D: Dictionary, fingerprint: str = None) -> bytes:
    parts = [
        SSRD_MAGIC,
        struct.pack('<I', SSRD_VERSION),
        pack_fingerprint(fingerprint),
        struct.pack('<IIII', D.dim, D.columns, D.source_tag.code, len(D.scale_blocks)),
    ]
    parts.extend(struct.pack('<III', b.scale_id, b.start, b.stop) for b in D.scale_blocks)
    parts.append(np.asfortranarray(D.atoms, dtype='<f4').tobytes(order='F'))
    return b''.join(parts)


def decode_dictionary(data: bytes, source='<bytes>') -> Tuple[Dictionary, str]:
    """Returns (Dictionary, fingerprint)"""
    reader = BinaryReader(data, source)
    reader.expect_magic(SSRD_MAGIC)
    reader.expect_version(SSRD_VERSION)
    fingerprint = reader.fingerprint()
    d, columns, tag, n_blocks = reader.unpack('IIII')
    blocks = tuple(ScaleBlock(*reader.unpack('III')) for _ in range(n_blocks))
    atoms = np.frombuffer(reader.read(4 * d * columns), dtype='<f4').reshape((d, columns), order='F')
    reader.expect_end()
    if tag >= len(SourceTag):
        raise UnsupportedFormatError(f"{source}: unknown source tag code {tag}")
    return Dictionary(atoms.astype(np.float64), blocks, SourceTag.from_code(tag)), fingerprint


def save_dictionary(path, D: Dictionary, fingerprint: str = None):
    atomic_write_bytes(path, encode_dictionary(D, fingerprint))
    logger.info(f"Saved {D!r} to {path}")


def load_dictionary(path) -> Tuple[Dictionary, str]:
    return decode_dictionary(read_artifact(path), source=str(path))
