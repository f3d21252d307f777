"""
Shared fixtures
"""
import os

import numpy as np
import pytest

os.environ.setdefault('SCENES_ENV', 'testing')


def pytest_addoption(parser):
    parser.addoption('--run-slow', action='store_true', default=False, help='run the end-to-end benchmarks')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --run-slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_dictionary(rng):
    """Seeded 16 x 64 Gaussian dictionary with unit-norm columns"""
    atoms = rng.standard_normal((16, 64))
    return atoms / np.linalg.norm(atoms, axis=0)


@pytest.fixture
def tiny_config():
    """Pipeline configuration small enough for a full train/eval in a few seconds"""
    from app.modules.pipeline.pipeline_config import PipelineConfig

    return PipelineConfig().with_overrides({
        'features': {'image_width': 32, 'image_height': 32},
        'pca': {'output_dim': 12},
        'dictionary': {'words_per_scale': [4, 8], 'epochs': 2, 'kmeans_iters': 10, 'inner_sweeps': 10},
        'classifier': {'C': 10.0, 'epochs': 200},
        'perturb': {'divisors': [4], 'kinds': ['occlusion'], 'seeds': [0, 1]},
        'pipeline': {'workers': 1},
    })


@pytest.fixture
def synthetic_dataset(tmp_path):
    """Three classes of 32x32 glyph scenes: 6 train and 3 test images each"""
    from app.modules.pipeline.synthetic import generate_synthetic

    out = tmp_path / 'synthetic'
    manifest = generate_synthetic(out, classes=3, size=32, train=6, test=3, seed=0)
    return out, manifest
