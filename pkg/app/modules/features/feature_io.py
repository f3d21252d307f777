"""
Feature Files
SSRF binary matrices (little-endian float32, row-major) and CSV import
"""
import logging
import struct
from pathlib import Path

import numpy as np
import pandas as pd

from app.errors import (
    BadMagicError,
    FeatureFileError,
    NonFiniteValueError,
    TruncatedPayloadError,
    UnsupportedFormatError,
)
from app.utils.storage import BinaryReader, atomic_write_bytes

logger = logging.getLogger(__name__)

SSRF_MAGIC = b'SSRF'
SSRF_VERSION = 1
DTYPE_FLOAT32 = 1
HEADER = struct.Struct('<4sIIQQ')


def encode_feature_matrix(matrix: np.ndarray) -> bytes:
    matrix = np.atleast_2d(np.asarray(matrix))
    if matrix.ndim != 2:
        raise FeatureFileError(f"Feature matrices must be 2-D, got shape {matrix.shape}")
    payload = np.ascontiguousarray(matrix, dtype='<f4')
    if not np.isfinite(payload).all():
        raise NonFiniteValueError("Refusing to write non-finite feature values")
    rows, cols = payload.shape
    return HEADER.pack(SSRF_MAGIC, SSRF_VERSION, DTYPE_FLOAT32, rows, cols) + payload.tobytes()


def decode_feature_matrix(data: bytes, source='<bytes>') -> np.ndarray:
    reader = BinaryReader(data, source)
    if len(data) < len(SSRF_MAGIC) or data[:4] != SSRF_MAGIC:
        raise BadMagicError(f"{source}: not an SSRF file (magic {data[:4]!r})")
    _, version, dtype, rows, cols = reader.unpack('4sIIQQ')
    if version != SSRF_VERSION:
        raise UnsupportedFormatError(f"{source}: unsupported SSRF version {version}")
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedFormatError(f"{source}: unsupported SSRF dtype code {dtype}")
    expected = rows * cols * 4
    remaining = len(data) - reader.pos
    if remaining != expected:
        raise TruncatedPayloadError(
            f"{source}: header declares {rows}x{cols} float32 ({expected} bytes), payload has {remaining}"
        )
    matrix = np.frombuffer(data, dtype='<f4', count=rows * cols, offset=reader.pos).reshape(rows, cols)
    if not np.isfinite(matrix).all():
        bad = int(np.argwhere(~np.isfinite(matrix))[0][0])
        raise NonFiniteValueError(f"{source}: non-finite value in row {bad}")
    return matrix.astype(np.float32)


def write_feature_file(path, matrix: np.ndarray):
    """Persist an n x d matrix as SSRF"""
    atomic_write_bytes(path, encode_feature_matrix(matrix))
    logger.info(f"Wrote feature file {path} {np.shape(np.atleast_2d(matrix))}")


def read_feature_file(path) -> np.ndarray:
    """Row i is sample i's descriptor (float32)"""
    path = Path(path)
    if not path.exists():
        raise FeatureFileError(f"Feature file not found: {path}")
    return decode_feature_matrix(path.read_bytes(), source=str(path))


def read_feature_csv(path) -> np.ndarray:
    """CSV import with a `dim0,dim1,...` header"""
    path = Path(path)
    if not path.exists():
        raise FeatureFileError(f"Feature file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FeatureFileError(f"{path}: cannot parse CSV: {e}") from e
    expected = [f'dim{i}' for i in range(frame.shape[1])]
    if list(frame.columns) != expected:
        raise BadMagicError(f"{path}: CSV header must be dim0..dim{frame.shape[1] - 1}")
    try:
        matrix = frame.to_numpy(dtype=np.float64)
    except ValueError as e:
        raise FeatureFileError(f"{path}: non-numeric CSV values: {e}") from e
    if not np.isfinite(matrix).all():
        raise NonFiniteValueError(f"{path}: non-finite values in CSV")
    return matrix.astype(np.float32)
