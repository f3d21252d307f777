import numpy as np
import pytest

from app.errors import ArtifactError, InvalidParameterError, RankDeficientError
from app.models import FeatureVector, SourceTag
from app.modules.features.pca import load_pca, pca_fit, pca_transform, pca_transform_matrix, save_pca


def test_line_in_3d(rng):
    direction = np.array([1.0, 2.0, -2.0]) / 3.0
    X = rng.standard_normal((50, 1)) * direction + np.array([1.0, 0.0, 5.0])
    model = pca_fit(X, 1)
    basis = model.basis[:, 0]
    assert abs(abs(basis @ direction) - 1.0) < 1e-6
    # largest-magnitude entry is positive
    assert basis[np.argmax(np.abs(basis))] > 0


def test_full_basis_reconstructs(rng):
    X = rng.standard_normal((40, 4))
    model = pca_fit(X, 4)
    projected = pca_transform_matrix(model, X)
    assert np.allclose(model.mean + projected @ model.basis.T, X, atol=1e-6)


def test_explained_variance_ratio(rng):
    X = rng.standard_normal((5000, 3)) * np.sqrt([9.0, 1.0, 0.01])
    model = pca_fit(X, 2)
    assert model.explained_variance_ratio[0] == pytest.approx(0.9, abs=0.02)
    assert model.explained_variance_ratio[1] == pytest.approx(0.1, abs=0.02)
    oracle = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False)))[::-1]
    assert np.allclose(model.explained_variance, oracle[:2])


def test_rank_deficient_lists_rank(rng):
    X = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 5))
    with pytest.raises(RankDeficientError) as excinfo:
        pca_fit(X, 3)
    assert excinfo.value.rank == 2


def test_output_dim_out_of_range(rng):
    with pytest.raises(InvalidParameterError):
        pca_fit(rng.standard_normal((5, 3)), 4)


def test_transform_examples(rng):
    X = rng.standard_normal((20, 4))
    model = pca_fit(X, 3)
    at_mean = pca_transform(model, FeatureVector(model.mean, SourceTag.STRUCTURE))
    assert np.allclose(at_mean.values, 0.0)
    shifted = pca_transform(model, FeatureVector(model.mean + model.basis[:, 1], SourceTag.STRUCTURE))
    assert np.allclose(shifted.values, [0.0, 1.0, 0.0])
    y = rng.standard_normal(4)
    naive = [sum((y[i] - model.mean[i]) * model.basis[i, j] for i in range(4)) for j in range(3)]
    assert np.allclose(pca_transform(model, FeatureVector(y, SourceTag.OBJECT)).values, naive)


def test_persistence_round_trip(tmp_path, rng):
    model = pca_fit(rng.standard_normal((20, 4)), 2)
    path = tmp_path / 'pca.ssrp'
    save_pca(path, model, 'abcdef0123456789')
    loaded, fingerprint = load_pca(path)
    assert fingerprint == 'abcdef0123456789'
    assert np.array_equal(loaded.basis, model.basis)
    assert np.array_equal(loaded.mean, model.mean)


def test_missing_artifact(tmp_path):
    with pytest.raises(ArtifactError):
        load_pca(tmp_path / 'absent.ssrp')
