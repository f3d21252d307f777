"""
Linear SVM
One-vs-rest hinge-loss classifiers trained by averaged Pegasos subgradient steps
"""
import logging
import struct
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.errors import (
    DataError,
    DimensionMismatchError,
    EmptyInputError,
    InvalidParameterError,
    SingleClassError,
)
from app.models import LabeledSet, LinearSvmModel, SceneRepresentation
from app.utils.storage import BinaryReader, atomic_write_bytes, pack_fingerprint, read_artifact

logger = logging.getLogger(__name__)

SSRM_MAGIC = b'SSRM'
SSRM_VERSION = 1


class SvmConfig(BaseModel):
    """Per class: min (lambda/2)||w||^2 + mean hinge, lambda = 1/C, bias folded into w"""
    model_config = ConfigDict(frozen=True)

    C: float = Field(1.0, gt=0.0)
    epochs: int = Field(1000, ge=1)
    seed: int = 0
    batch_size: Optional[int] = Field(None, ge=1)
    bias_scale: float = Field(1.0, gt=0.0)


def _augment(X: np.ndarray, bias_scale: float) -> np.ndarray:
    return np.hstack([X, np.full((X.shape[0], 1), bias_scale)])


def _batches(n: int, cfg: SvmConfig, rng: np.random.Generator):
    if cfg.batch_size is None or cfg.batch_size >= n:
        yield None
        return
    order = rng.permutation(n)
    for start in range(0, n, cfg.batch_size):
        yield order[start:start + cfg.batch_size]


def train(data: LabeledSet, C: float = None, seed: int = None, cfg: SvmConfig = None) -> LinearSvmModel:
    """
    One-vs-rest linear SVM. All classes take their Pegasos step together: step size
    1/(lambda t), projection onto ||w|| <= 1/sqrt(lambda), and the returned weights
    are the average of the iterates from the second half of training.
    """
    cfg = cfg or SvmConfig()
    updates = {k: v for k, v in (('C', C), ('seed', seed)) if v is not None}
    if updates:
        cfg = cfg.model_copy(update=updates)
    if cfg.C <= 0:
        raise InvalidParameterError(f"SVM C must be positive, got {cfg.C}")
    if len(data) == 0:
        raise EmptyInputError("No training samples for the classifier")
    X = data.representations
    if not np.isfinite(X).all():
        raise DataError("Classifier training data contains non-finite values")
    classes = np.unique(data.labels)
    if classes.size < 2:
        raise SingleClassError(f"Training data has a single class {classes.tolist()}; need at least two")

    lam = 1.0 / cfg.C
    radius = 1.0 / np.sqrt(lam)
    Xa = _augment(X, cfg.bias_scale)
    # +1 for the class, -1 for the rest
    Y = np.where(data.labels[:, None] == classes[None, :], 1.0, -1.0)
    n = Xa.shape[0]
    rng = np.random.default_rng(cfg.seed)

    steps_per_epoch = 1 if cfg.batch_size is None or cfg.batch_size >= n else -(-n // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    average_from = total_steps // 2 + 1

    W = np.zeros((classes.size, Xa.shape[1]))
    W_sum = np.zeros_like(W)
    averaged = 0
    t = 0
    for _ in range(cfg.epochs):
        for batch in _batches(n, cfg, rng):
            t += 1
            Xb = Xa if batch is None else Xa[batch]
            Yb = Y if batch is None else Y[batch]
            violating = (Yb * (Xb @ W.T)) < 1.0
            gradient = lam * W - ((Yb * violating).T @ Xb) / Xb.shape[0]
            W = W - gradient / (lam * t)
            norms = np.linalg.norm(W, axis=1, keepdims=True)
            W = W * np.minimum(1.0, radius / np.where(norms == 0.0, 1.0, norms))
            if t >= average_from:
                W_sum += W
                averaged += 1

    W = W_sum / averaged
    model = LinearSvmModel(
        weights=W[:, :-1],
        biases=W[:, -1] * cfg.bias_scale,
        labels=classes,
        C=cfg.C,
    )
    logger.info(
        f"Trained SVM classes={classes.size} n={n} d={X.shape[1]} C={cfg.C}: "
        f"objective {primal_objective(model, data):.6g}"
    )
    return model


def primal_objective(model: LinearSvmModel, data: LabeledSet) -> float:
    """Sum over classes of (lambda/2)(||w||^2 + b'^2) + mean hinge"""
    lam = 1.0 / model.C
    scores = decision_function(model, data.representations)
    Y = np.where(data.labels[:, None] == model.labels[None, :], 1.0, -1.0)
    hinge = np.maximum(0.0, 1.0 - Y * scores).mean(axis=0)
    regular = 0.5 * lam * (np.sum(model.weights ** 2, axis=1) + model.biases ** 2)
    return float(np.sum(regular + hinge))


# ============================================
# Prediction
# ============================================

def decision_function(model: LinearSvmModel, X: np.ndarray) -> np.ndarray:
    """n x classes scores w_c . x + b_c"""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise DimensionMismatchError(f"Classifier expects dimension {model.dim}, got {X.shape[1]}")
    return X @ model.weights.T + model.biases


def predict(model: LinearSvmModel, rep: Union[SceneRepresentation, np.ndarray]) -> Tuple[int, np.ndarray]:
    """(label, per-class scores); ties go to the lowest class index"""
    values = rep.values if isinstance(rep, SceneRepresentation) else rep
    scores = decision_function(model, values)[0]
    return int(model.labels[int(np.argmax(scores))]), scores


def predict_matrix(model: LinearSvmModel, X: np.ndarray) -> np.ndarray:
    scores = decision_function(model, X)
    return model.labels[np.argmax(scores, axis=1)]


# ============================================
# Evaluation
# ============================================

def evaluate(model: LinearSvmModel, data: LabeledSet) -> Tuple[float, np.ndarray]:
    """
    Overall accuracy and per-class accuracies aligned with `model.labels`.
    Classes absent from `data` get NaN.
    """
    if len(data) == 0:
        raise EmptyInputError("Cannot evaluate on an empty set")
    predicted = predict_matrix(model, data.representations)
    correct = predicted == data.labels
    per_class = np.full(model.n_classes, np.nan)
    for i, label in enumerate(model.labels):
        mask = data.labels == label
        if mask.any():
            per_class[i] = correct[mask].mean()
    return float(correct.mean()), per_class


def confusion_matrix(model: LinearSvmModel, data: LabeledSet) -> np.ndarray:
    """Counts with true classes on rows and predictions on columns, in `model.labels` order"""
    index = {int(label): i for i, label in enumerate(model.labels)}
    unknown = set(data.labels.tolist()) - set(index)
    if unknown:
        raise DataError(f"Labels {sorted(unknown)} are unknown to the classifier")
    predicted = predict_matrix(model, data.representations)
    matrix = np.zeros((model.n_classes, model.n_classes), dtype=np.int64)
    rows = np.array([index[int(v)] for v in data.labels], dtype=np.int64)
    cols = np.array([index[int(v)] for v in predicted], dtype=np.int64)
    np.add.at(matrix, (rows, cols), 1)
    return matrix


def relative_accuracy(per_class: np.ndarray, baseline: np.ndarray) -> np.ndarray:
    """Per-class accuracy gain over a baseline representation"""
    per_class = np.asarray(per_class, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if per_class.shape != baseline.shape:
        raise DimensionMismatchError(f"Per-class vectors differ in shape: {per_class.shape} vs {baseline.shape}")
    return per_class - baseline


def grid_search_c(train_set: LabeledSet, validation: LabeledSet, grid: Sequence[float],
                  cfg: SvmConfig = None) -> Tuple[float, List[Tuple[float, float]]]:
    """Best C on the validation set (ties go to the smaller C) and every (C, accuracy)"""
    if not grid:
        raise InvalidParameterError("C grid is empty")
    cfg = cfg or SvmConfig()
    results = []
    for C in sorted(grid):
        accuracy, _ = evaluate(train(train_set, cfg=cfg.model_copy(update={'C': float(C)})), validation)
        logger.info(f"C={C}: validation accuracy {accuracy:.4f}")
        results.append((float(C), accuracy))
    best = max(results, key=lambda r: (r[1], -r[0]))
    return best[0], results


# ============================================
# Persistence (SSRM)
# ============================================

def encode_model(model: LinearSvmModel, fingerprint: str = None) -> bytes:
    return b''.join([
        SSRM_MAGIC,
        struct.pack('<I', SSRM_VERSION),
        pack_fingerprint(fingerprint),
        struct.pack('<IId', model.n_classes, model.dim, float(model.C)),
        np.ascontiguousarray(model.labels, dtype='<i4').tobytes(),
        np.ascontiguousarray(model.weights, dtype='<f4').tobytes(),
        np.ascontiguousarray(model.biases, dtype='<f4').tobytes(),
    ])


def decode_model(data: bytes, source='<bytes>') -> Tuple[LinearSvmModel, str]:
    """Returns (LinearSvmModel, fingerprint)"""
    reader = BinaryReader(data, source)
    reader.expect_magic(SSRM_MAGIC)
    reader.expect_version(SSRM_VERSION)
    fingerprint = reader.fingerprint()
    classes, dim, C = reader.unpack('IId')
    labels = np.frombuffer(reader.read(4 * classes), dtype='<i4')
    weights = np.frombuffer(reader.read(4 * classes * dim), dtype='<f4').reshape(classes, dim)
    biases = np.frombuffer(reader.read(4 * classes), dtype='<f4')
    reader.expect_end()
    model = LinearSvmModel(
        weights=weights.astype(np.float64),
        biases=biases.astype(np.float64),
        labels=labels.astype(np.int64),
        C=C,
    )
    return model, fingerprint


def quantized(model: LinearSvmModel) -> LinearSvmModel:
    """Weights and biases rounded to the float32 precision they are persisted with"""
    return LinearSvmModel(
        weights=model.weights.astype(np.float32).astype(np.float64),
        biases=model.biases.astype(np.float32).astype(np.float64),
        labels=model.labels,
        C=model.C,
    )


def save_model(path, model: LinearSvmModel, fingerprint: str = None):
    atomic_write_bytes(path, encode_model(model, fingerprint))
    logger.info(f"Saved {model!r} to {path}")


def load_model(path) -> Tuple[LinearSvmModel, str]:
    return decode_model(read_artifact(path), source=str(path))
