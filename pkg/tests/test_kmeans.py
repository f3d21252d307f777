import numpy as np
import pytest

from app.errors import EmptyInputError, InvalidParameterError
from app.modules.sparse.kmeans import kmeans, kmeans_fit
from app.modules.sparse.sparse_config import KmeansConfig


def test_single_cluster_is_the_mean(rng):
    Y = rng.standard_normal((30, 4))
    centroids = kmeans(Y, KmeansConfig(k=1))
    assert np.allclose(centroids[0], Y.mean(axis=0))


def test_two_separated_clusters(rng):
    a = rng.normal(0.0, 0.01, size=(40, 3)) + np.array([10.0, 0.0, 0.0])
    b = rng.normal(0.0, 0.01, size=(25, 3)) - np.array([10.0, 0.0, 0.0])
    Y = np.vstack([a, b])
    centroids = kmeans(Y, KmeansConfig(k=2, seed=3))
    found = sorted(centroids.tolist(), key=lambda c: c[0])
    assert np.allclose(found[0], b.mean(axis=0), atol=1e-6)
    assert np.allclose(found[1], a.mean(axis=0), atol=1e-6)


def test_repeated_rows_give_zero_inertia():
    distinct = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]])
    Y = np.repeat(distinct, 5, axis=0)
    result = kmeans_fit(Y, KmeansConfig(k=3))
    assert result.inertia == pytest.approx(0.0)
    assert sorted(map(tuple, result.centroids)) == sorted(map(tuple, distinct))


def test_inertia_never_increases(rng):
    Y = rng.standard_normal((200, 5))
    trace = kmeans_fit(Y, KmeansConfig(k=6, max_iters=30)).inertia_trace
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))


def test_seeded_runs_are_identical(rng):
    Y = rng.standard_normal((100, 3))
    cfg = KmeansConfig(k=4, seed=7)
    assert np.array_equal(kmeans(Y, cfg), kmeans(Y, cfg))


def test_preconditions(rng):
    with pytest.raises(InvalidParameterError):
        kmeans(rng.standard_normal((3, 2)), KmeansConfig(k=4))
    with pytest.raises(EmptyInputError):
        kmeans(np.zeros((0, 2)), KmeansConfig(k=1))
