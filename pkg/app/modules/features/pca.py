"""
PCA
Principal component reduction of local descriptors
"""
import logging
import struct

import numpy as np
from scipy import linalg

from app.errors import DimensionMismatchError, InvalidParameterError, RankDeficientError
from app.models import FeatureVector, PcaModel
from app.utils.storage import BinaryReader, atomic_write_bytes, pack_fingerprint, read_artifact

logger = logging.getLogger(__name__)

SSRP_MAGIC = b'SSRP'
SSRP_VERSION = 1


def _canonical_signs(basis: np.ndarray) -> np.ndarray:
    """Flip each column so that its largest-magnitude entry is positive"""
    pivots = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivots, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def pca_fit(X: np.ndarray, p: int) -> PcaModel:
    """Top-p principal directions of X (n x d) by explained variance, descending"""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatchError(f"PCA expects an n x d matrix, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise InvalidParameterError(f"PCA needs at least 2 samples, got {n}")
    if not 1 <= p <= min(n - 1, d):
        raise InvalidParameterError(f"PCA output dim {p} outside 1..{min(n - 1, d)}")

    mean = X.mean(axis=0)
    centered = X - mean
    covariance = centered.T @ centered / (n - 1)
    eigenvalues, eigenvectors = linalg.eigh(covariance)
    # descending, ties broken by the eigensolver's column order
    order = np.argsort(-eigenvalues, kind='stable')
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    eigenvectors = eigenvectors[:, order]

    tol = max(eigenvalues[0], 1e-300) * d * np.finfo(np.float64).eps * 10
    rank = int(np.sum(eigenvalues > tol))
    if p > rank:
        raise RankDeficientError(p, rank)

    total = eigenvalues.sum()
    basis = _canonical_signs(eigenvectors[:, :p])
    model = PcaModel(
        mean=mean,
        basis=basis,
        explained_variance=eigenvalues[:p],
        explained_variance_ratio=eigenvalues[:p] / total if total > 0 else np.zeros(p),
    )
    logger.info(
        f"PCA fit {d}->{p} on {n} samples, retained variance "
        f"{float(model.explained_variance_ratio.sum()):.4f}"
    )
    return model


def pca_transform_matrix(model: PcaModel, Y: np.ndarray) -> np.ndarray:
    """Project every row of Y (n x d) onto the model basis"""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if Y.shape[1] != model.input_dim:
        raise DimensionMismatchError(f"PCA expects dimension {model.input_dim}, got {Y.shape[1]}")
    return (Y - model.mean) @ model.basis


def pca_transform(model: PcaModel, y: FeatureVector) -> FeatureVector:
    """p-dimensional projection of (y - mean)"""
    if y.dim != model.input_dim:
        raise DimensionMismatchError(f"PCA expects dimension {model.input_dim}, got {y.dim}")
    projected = (y.values - model.mean) @ model.basis
    return FeatureVector(projected, y.source_tag, y.scale_id, y.patch_index)


# ============================================
# Persistence (SSRP)
# ============================================

def encode_pca(model: PcaModel, fingerprint: str = None) -> bytes:
    d, p = model.input_dim, model.output_dim
    header = SSRP_MAGIC + struct.pack('<I', SSRP_VERSION) + pack_fingerprint(fingerprint) + struct.pack('<II', d, p)
    body = b''.join([
        np.ascontiguousarray(model.mean, dtype='<f8').tobytes(),
        np.asfortranarray(model.basis, dtype='<f8').tobytes(order='F'),
        np.ascontiguousarray(model.explained_variance, dtype='<f8').tobytes(),
        np.ascontiguousarray(model.explained_variance_ratio, dtype='<f8').tobytes(),
    ])
    return header + body


def decode_pca(data: bytes, source='<bytes>'):
    """Returns (PcaModel, fingerprint)"""
    reader = BinaryReader(data, source)
    reader.expect_magic(SSRP_MAGIC)
    reader.expect_version(SSRP_VERSION)
    fingerprint = reader.fingerprint()
    d, p = reader.unpack('II')
    mean = np.frombuffer(reader.read(8 * d), dtype='<f8')
    basis = np.frombuffer(reader.read(8 * d * p), dtype='<f8').reshape((d, p), order='F')
    variance = np.frombuffer(reader.read(8 * p), dtype='<f8')
    ratio = np.frombuffer(reader.read(8 * p), dtype='<f8')
    reader.expect_end()
    return PcaModel(mean, basis, variance, ratio), fingerprint


def save_pca(path, model: PcaModel, fingerprint: str = None):
    atomic_write_bytes(path, encode_pca(model, fingerprint))


def load_pca(path):
    return decode_pca(read_artifact(path), source=str(path))
