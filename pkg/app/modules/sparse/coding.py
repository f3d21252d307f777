"""
Sparse Coding
OMP (primary) and LASSO coding of descriptors against a fixed dictionary
"""
import logging
from typing import Union

import numpy as np
from scipy import linalg, sparse

from app.errors import DimensionMismatchError, InvalidParameterError, NumericalError, SceneCodingError, StageError
from app.models import Dictionary, FeatureVector, SparseCode
from app.modules.sparse.sparse_config import CodingConfig, CodingSolver

logger = logging.getLogger(__name__)

GRAM_JITTER = 1e-10
GRAM_COND_LIMIT = 1e12
CORRELATION_FLOOR = 1e-12

DictionaryLike = Union[Dictionary, np.ndarray]
VectorLike = Union[FeatureVector, np.ndarray]


def _atoms(D: DictionaryLike) -> np.ndarray:
    return D.atoms if isinstance(D, Dictionary) else np.asarray(D, dtype=np.float64)


def _vector(y: VectorLike, dim: int) -> np.ndarray:
    values = y.values if isinstance(y, FeatureVector) else np.asarray(y, dtype=np.float64).ravel()
    if values.size != dim:
        raise DimensionMismatchError(f"Descriptor has dimension {values.size}, dictionary atoms have {dim}")
    if not np.isfinite(values).all():
        raise InvalidParameterError("Descriptor contains non-finite values")
    return values


def soft_threshold(values, threshold):
    return np.sign(values) * np.maximum(np.abs(values) - threshold, 0.0)


def solve_gram(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """SPD solve of the normal equations, with diagonal jitter when near-singular"""
    if np.linalg.cond(gram) > GRAM_COND_LIMIT:
        logger.debug(f"Gram matrix of size {gram.shape[0]} is near-singular, adding jitter")
        gram = gram + GRAM_JITTER * np.eye(gram.shape[0])
    try:
        return linalg.solve(gram, rhs, assume_a='pos')
    except linalg.LinAlgError:
        try:
            return linalg.solve(gram + GRAM_JITTER * np.eye(gram.shape[0]), rhs, assume_a='pos')
        except linalg.LinAlgError as e:
            raise NumericalError(f"Least-squares refit failed: {e}") from e


def _make_code(dense_support, coefficients, dict_columns) -> SparseCode:
    order = np.argsort(dense_support)
    indices = np.asarray(dense_support, dtype=np.int64)[order]
    values = np.asarray(coefficients, dtype=np.float64)[order]
    keep = values != 0.0
    return SparseCode(indices[keep], values[keep], dict_columns)


def omp_path(D: DictionaryLike, y: VectorLike, max_atoms: int, residual_tol: float = 1e-6):
    """
    Orthogonal matching pursuit. Returns (support in selection order, coefficients,
    residual norm after each step). Ties in |correlation| go to the lowest column.
    """
    atoms = _atoms(D)
    y = _vector(y, atoms.shape[0])
    support = []
    coefficients = np.zeros(0)
    residual = y.copy()
    residual_norms = [float(np.linalg.norm(residual))]

    while len(support) < max_atoms and residual_norms[-1] > residual_tol:
        correlations = np.abs(atoms.T @ residual)
        correlations[support] = -1.0
        j = int(np.argmax(correlations))
        if correlations[j] <= CORRELATION_FLOOR:
            break
        support.append(j)
        selected = atoms[:, support]
        coefficients = solve_gram(selected.T @ selected, selected.T @ y)
        residual = y - selected @ coefficients
        residual_norms.append(float(np.linalg.norm(residual)))

    return support, coefficients, residual_norms


def omp(D: DictionaryLike, y: VectorLike, cfg: CodingConfig = None) -> SparseCode:
    """At most L = max(1, floor(fraction * columns)) nonzeros, greedy with least-squares refit"""
    cfg = cfg or CodingConfig()
    atoms = _atoms(D)
    max_atoms = cfg.max_nonzeros(atoms.shape[1])
    support, coefficients, _ = omp_path(atoms, y, max_atoms, cfg.residual_tol)
    return _make_code(support, coefficients, atoms.shape[1])


def coordinate_descent(gram: np.ndarray, correlations: np.ndarray, penalty: float,
                       init: np.ndarray = None, max_sweeps: int = 100, tol: float = 1e-6):
    """
    Cyclic coordinate descent on 0.5 z'Gz - c'z + penalty ||z||_1 for every row of
    `correlations` (n x K) at once. Returns (Z, sweeps). Each coordinate step is an
    exact minimisation, so the objective never increases.
    """
    correlations = np.atleast_2d(correlations)
    n, k = correlations.shape
    Z = np.zeros((n, k)) if init is None else np.array(init, dtype=np.float64, copy=True)
    # Q = C - Z G, kept in sync with Z
    Q = correlations - Z @ gram
    diag = np.diag(gram)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(k):
            if diag[j] <= 0.0:
                continue
            rho = Q[:, j] + Z[:, j] * diag[j]
            z_new = soft_threshold(rho, penalty) / diag[j]
            delta = z_new - Z[:, j]
            changed = np.flatnonzero(delta)
            if changed.size == 0:
                continue
            Z[changed, j] = z_new[changed]
            Q[changed] -= delta[changed, None] * gram[j][None, :]
            max_change = max(max_change, float(np.abs(delta[changed]).max()))
        if max_change < tol:
            break
    return Z, sweeps


def lasso(D: DictionaryLike, y: VectorLike, lam: float, max_sweeps: int = 10000,
          tol: float = 1e-12) -> SparseCode:
    """Minimiser of 0.5 ||y - Dx||^2 + lam ||x||_1 by cyclic coordinate descent"""
    if lam < 0:
        raise InvalidParameterError(f"LASSO lambda must be >= 0, got {lam}")
    atoms = _atoms(D)
    y = _vector(y, atoms.shape[0])
    Z, _ = coordinate_descent(atoms.T @ atoms, (atoms.T @ y)[None, :], lam, max_sweeps=max_sweeps, tol=tol)
    x = Z[0]
    support = np.flatnonzero(x)
    return _make_code(support, x[support], atoms.shape[1])


def kkt_violation(D: DictionaryLike, y: VectorLike, code: SparseCode, lam: float) -> float:
    """Largest violation of the LASSO optimality conditions"""
    atoms = _atoms(D)
    y = _vector(y, atoms.shape[0])
    x = code.to_dense()
    gradient = atoms.T @ (y - atoms @ x)
    active = x != 0.0
    violation = np.zeros_like(gradient)
    violation[active] = np.abs(gradient[active] - lam * np.sign(x[active]))
    violation[~active] = np.maximum(np.abs(gradient[~active]) - lam, 0.0)
    return float(violation.max()) if violation.size else 0.0


def encode(D: DictionaryLike, y: VectorLike, cfg: CodingConfig = None) -> SparseCode:
    """Code one descriptor with the configured solver"""
    cfg = cfg or CodingConfig()
    if cfg.solver == CodingSolver.LASSO:
        return lasso(D, y, cfg.lasso_lambda)
    return omp(D, y, cfg)


def code_matrix(D: DictionaryLike, Y: np.ndarray, cfg: CodingConfig = None) -> sparse.csr_matrix:
    """Row i is the code of sample i; identical to m independent calls. Failures carry the row index"""
    cfg = cfg or CodingConfig()
    atoms = _atoms(D)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    indptr = [0]
    indices, data = [], []
    for i, row in enumerate(Y):
        try:
            code = encode(atoms, row, cfg)
        except SceneCodingError as e:
            raise StageError('coding', e, sample=i) from e
        indices.append(code.indices)
        data.append(code.coefficients)
        indptr.append(indptr[-1] + code.nnz)
    return sparse.csr_matrix(
        (np.concatenate(data) if data else np.zeros(0),
         np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
         np.asarray(indptr)),
        shape=(Y.shape[0], atoms.shape[1]),
    )


def format_code_dump(X: sparse.spmatrix) -> str:
    """Debug text: `sample_index idx:val idx:val ...` per row"""
    X = sparse.csr_matrix(X)
    lines = []
    for i in range(X.shape[0]):
        start, stop = X.indptr[i], X.indptr[i + 1]
        pairs = ' '.join(f"{j}:{v:.9g}" for j, v in zip(X.indices[start:stop], X.data[start:stop]))
        lines.append(f"{i} {pairs}".rstrip())
    return '\n'.join(lines) + ('\n' if lines else '')
