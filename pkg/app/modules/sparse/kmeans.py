"""
K-Means
k-means++ seeding followed by Lloyd iterations, deterministic given the seed
"""
import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from app.errors import EmptyInputError, InvalidParameterError, NonFiniteValueError
from app.modules.sparse.sparse_config import KmeansConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class KmeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_trace: List[float]

    @property
    def inertia(self) -> float:
        return self.inertia_trace[-1]


def _squared_distances(Y: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum('ij,ij->i', Y, Y)[:, None]
        - 2.0 * Y @ centroids.T
        + np.einsum('ij,ij->i', centroids, centroids)[None, :]
    )
    return np.maximum(d2, 0.0)


def kmeans_plus_plus(Y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = Y.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _squared_distances(Y, Y[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # fewer distinct points than clusters: take the first unused sample
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(remaining[0])
        else:
            idx = int(rng.choice(n, p=closest / total))
        chosen.append(idx)
        closest = np.minimum(closest, _squared_distances(Y, Y[idx:idx + 1])[:, 0])
    return Y[chosen].copy()


def kmeans_fit(Y: np.ndarray, cfg: KmeansConfig) -> KmeansResult:
    """Centroids, labels and the inertia after seeding and after every Lloyd iteration"""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise EmptyInputError("k-means needs a non-empty n x d matrix")
    if not np.isfinite(Y).all():
        raise NonFiniteValueError("k-means input contains non-finite values")
    n = Y.shape[0]
    if cfg.k > n:
        raise InvalidParameterError(f"k-means asked for {cfg.k} clusters from {n} samples")

    rng = np.random.default_rng(cfg.seed)
    centroids = kmeans_plus_plus(Y, cfg.k, rng)
    d2 = _squared_distances(Y, centroids)
    labels = np.argmin(d2, axis=1)
    trace = [float(d2[np.arange(n), labels].sum())]

    for _ in range(cfg.max_iters):
        counts = np.bincount(labels, minlength=cfg.k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, Y)
        occupied = counts > 0
        # empty clusters keep their previous centroid
        new_centroids = centroids.copy()
        new_centroids[occupied] = sums[occupied] / counts[occupied, None]

        d2 = _squared_distances(Y, new_centroids)
        new_labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), new_labels].sum())
        shift = float(np.linalg.norm(new_centroids - centroids))
        centroids, labels = new_centroids, new_labels
        trace.append(inertia)
        if shift <= cfg.tol:
            break

    logger.info(f"k-means k={cfg.k} n={n}: {len(trace) - 1} iterations, inertia {trace[-1]:.6g}")
    return KmeansResult(centroids=centroids, labels=labels, inertia_trace=trace)


def kmeans(Y: np.ndarray, cfg: KmeansConfig) -> np.ndarray:
    """k x d centroid matrix"""
    return kmeans_fit(Y, cfg).centroids
