"""
End-to-end pipeline runs on the synthetic benchmark
"""
import numpy as np
import pytest

from app.errors import (
    EmptyInputError,
    FingerprintMismatchError,
    ManifestError,
    NumericalError,
    StageError,
    UsageError,
)
from app.models import DatasetManifest
from app.modules.features.feature_io import write_feature_file
from app.modules.pipeline.artifacts import TRAINING_LOG, inspect_artifacts, read_training_log
from app.modules.pipeline.manifest import import_feature_labels, load_manifest
from app.modules.pipeline.pipeline_config import PipelineConfig, preset_config
from app.modules.pipeline.runner import model_fingerprint, run_ablation, run_eval, run_train
from app.modules.pipeline.synthetic import generate_synthetic
from app.modules.robustness.perturb import PerturbationKind, PerturbationSpec
from app.modules.sparse import coding

# every file the trained models are rebuilt from
ARTIFACT_FILES = (
    'pca_structure.ssrp', 'pca_object.ssrp', 'dictionary_structure.ssrd', 'dictionary_object.ssrd',
    'svm_combined.ssrm', 'svm_global.ssrm', 'svm_local.ssrm',
)


@pytest.fixture
def trained(tmp_path, tiny_config, synthetic_dataset):
    out, _ = synthetic_dataset
    manifest = load_manifest(out)
    artifact_dir = tmp_path / 'artifacts'
    artifacts = run_train(tiny_config, manifest, artifact_dir, tmp_path / 'cache')
    return manifest, artifact_dir, artifacts


def test_train_writes_artifacts(trained, tiny_config):
    manifest, artifact_dir, artifacts = trained
    names = {p.name for p in artifact_dir.iterdir()}
    assert {
        'dictionary_structure.ssrd', 'dictionary_object.ssrd', 'pca_structure.ssrp', 'pca_object.ssrp',
        'svm_combined.ssrm', 'svm_global.ssrm', 'svm_local.ssrm', 'layout.json', 'config.ini',
        TRAINING_LOG, 'train_representations.ssrf',
    } <= names
    assert artifacts.fingerprint == model_fingerprint(tiny_config)
    assert artifacts.classes == manifest.classes
    assert sum(segment.length for segment in artifacts.layout) == 40 + 2 * 12

    log = read_training_log(artifact_dir)
    assert log['words_per_scale'] == [4, 8]
    assert log['n_train'] == 18
    assert set(log['objective_traces']) == {'structure', 'object'}

    info = inspect_artifacts(artifact_dir)
    assert info['dictionaries']['structure']['columns'] == 12
    assert info['dictionaries']['object']['blocks'] == [[1, 0, 4], [2, 4, 12]]
    assert info['pca']['object']['output_dim'] == 12


def test_eval_report(trained, tiny_config):
    manifest, artifact_dir, _ = trained
    report = run_eval(tiny_config, manifest, artifact_dir)
    assert 0.0 <= report.overall <= 1.0
    assert 0.0 <= report.global_overall <= 1.0
    assert list(report.per_class) == list(manifest.classes)
    assert report.n_test == 9
    assert report.fingerprint == tiny_config.fingerprint
    assert sum(map(sum, report.confusion)) == 9
    assert report.rows == []


def test_eval_is_deterministic(tmp_path, tiny_config, synthetic_dataset):
    out, _ = synthetic_dataset
    manifest = load_manifest(out)
    reports = []
    for name in ('first', 'second'):
        run_train(tiny_config, manifest, tmp_path / name)
        reports.append(run_eval(tiny_config, manifest, tmp_path / name))
    assert reports[0].comparable() == reports[1].comparable()
    for artifact in ARTIFACT_FILES:
        assert (tmp_path / 'first' / artifact).read_bytes() == (tmp_path / 'second' / artifact).read_bytes()


def test_cached_training_reproduces_artifacts(trained, tmp_path, tiny_config):
    manifest, artifact_dir, _ = trained
    again = tmp_path / 'again'
    run_train(tiny_config, manifest, again, tmp_path / 'cache')
    for artifact in ('dictionary_structure.ssrd', 'dictionary_object.ssrd', 'svm_combined.ssrm'):
        assert (artifact_dir / artifact).read_bytes() == (again / artifact).read_bytes()
    assert run_eval(tiny_config, manifest, artifact_dir, cache_dir=tmp_path / 'cache').comparable() == \
        run_eval(tiny_config, manifest, again).comparable()


def test_changed_config_refuses_artifacts(trained, tiny_config):
    manifest, artifact_dir, _ = trained
    changed = tiny_config.with_overrides({'classifier': {'C': 1.0}})
    with pytest.raises(StageError) as excinfo:
        run_eval(changed, manifest, artifact_dir)
    assert isinstance(excinfo.value.cause, FingerprintMismatchError)
    assert excinfo.value.exit_code == 2


def test_perturb_settings_keep_artifacts_valid(trained, tiny_config):
    manifest, artifact_dir, _ = trained
    changed = tiny_config.with_overrides({'perturb': {'divisors': [8, 4]}})
    report = run_eval(changed, manifest, artifact_dir, specs=changed.perturb.grid())
    assert [(row.kind, row.n, row.seeds) for row in report.rows] == [('occlusion', 8, 2), ('occlusion', 4, 2)]
    for row in report.rows:
        assert 0.0 <= row.accuracy <= 1.0
        assert 0.0 <= row.global_accuracy <= 1.0


def test_single_spec_robustness_row(trained, tiny_config):
    manifest, artifact_dir, _ = trained
    spec = PerturbationSpec(kind=PerturbationKind.NOISE, divisor=4, seed=3)
    report = run_eval(tiny_config, manifest, artifact_dir, specs=[spec])
    assert len(report.rows) == 1
    assert (report.rows[0].kind, report.rows[0].n, report.rows[0].seeds) == ('noise', 4, 1)


def test_ablation(trained, tiny_config):
    manifest, artifact_dir, _ = trained
    report = run_ablation(tiny_config, manifest, artifact_dir)
    assert set(report.ablation) == {'global', 'local', 'combined'}
    assert report.ablation['combined'] == report.overall
    assert report.ablation['global'] == report.global_overall


def test_relative_accuracy_against_global(trained, tiny_config):
    manifest, artifact_dir, _ = trained
    report = run_eval(tiny_config, manifest, artifact_dir)
    assert list(report.relative) == list(manifest.classes)
    for name in manifest.classes:
        assert -1.0 <= report.relative[name] <= 1.0


def test_classes_without_test_samples_are_left_out(trained, tiny_config):
    manifest, artifact_dir, _ = trained
    absent = manifest.classes[0]
    partial = DatasetManifest(
        classes=manifest.classes,
        samples=tuple(s for s in manifest.samples if s.split == 'train' or s.label != 0),
        root=manifest.root,
    )
    report = run_eval(tiny_config, partial, artifact_dir)
    assert report.n_test == 6
    assert list(report.per_class) == list(manifest.classes[1:])
    assert absent not in report.relative
    assert sum(report.confusion[0]) == 0


def test_coding_failure_names_image_and_row(trained, tiny_config, monkeypatch):
    manifest, artifact_dir, _ = trained

    def failing_encode(atoms, row, cfg):
        raise NumericalError('Least-squares refit failed')

    monkeypatch.setattr(coding, 'encode', failing_encode)
    with pytest.raises(StageError) as excinfo:
        run_eval(tiny_config, manifest, artifact_dir)
    assert excinfo.value.stage == 'coding'
    assert excinfo.value.sample == f"{manifest.split('test')[0].ref}, row 0"
    assert isinstance(excinfo.value.cause, NumericalError)
    assert excinfo.value.exit_code == 3


def test_mismatched_classes(trained, tiny_config):
    manifest, artifact_dir, _ = trained
    renamed = DatasetManifest(classes=tuple(reversed(manifest.classes)), samples=manifest.samples, root=manifest.root)
    with pytest.raises(StageError) as excinfo:
        run_eval(tiny_config, renamed, artifact_dir)
    assert isinstance(excinfo.value.cause, ManifestError)


def test_missing_artifacts(tmp_path, tiny_config, synthetic_dataset):
    out, _ = synthetic_dataset
    with pytest.raises(StageError) as excinfo:
        run_eval(tiny_config, load_manifest(out), tmp_path / 'nothing')
    assert excinfo.value.stage == 'artifacts'
    assert excinfo.value.exit_code == 2


def test_empty_train_split(tmp_path, tiny_config, synthetic_dataset):
    _, manifest = synthetic_dataset
    test_only = DatasetManifest(
        classes=manifest.classes, samples=tuple(manifest.split('test')), root=manifest.root,
    )
    with pytest.raises(StageError) as excinfo:
        run_train(tiny_config, test_only, tmp_path / 'artifacts')
    assert isinstance(excinfo.value.cause, EmptyInputError)


def test_external_mode_rejects_perturbations(tmp_path, tiny_config, synthetic_dataset):
    _, manifest = synthetic_dataset
    external = tiny_config.with_overrides({'features': {'mode': 'external'}})
    spec = PerturbationSpec(kind=PerturbationKind.OCCLUSION, divisor=4)
    with pytest.raises(StageError) as excinfo:
        run_eval(external, manifest, tmp_path / 'artifacts', specs=[spec])
    assert isinstance(excinfo.value.cause, UsageError)
    assert excinfo.value.exit_code == 1


def test_feature_cache_follows_overwritten_images(tmp_path, tiny_config, synthetic_dataset):
    out, manifest = synthetic_dataset
    cache = tmp_path / 'cache'
    run_train(tiny_config, manifest, tmp_path / 'before', cache)
    stale = run_eval(tiny_config, manifest, tmp_path / 'before', cache_dir=cache)

    # same refs, different pixels
    generate_synthetic(out, classes=3, size=32, train=6, test=3, seed=1)
    manifest = load_manifest(out)
    run_train(tiny_config, manifest, tmp_path / 'cached', cache)
    run_train(tiny_config, manifest, tmp_path / 'fresh')
    for artifact in ARTIFACT_FILES:
        assert (tmp_path / 'cached' / artifact).read_bytes() == (tmp_path / 'fresh' / artifact).read_bytes()
    assert (tmp_path / 'before' / 'dictionary_structure.ssrd').read_bytes() != \
        (tmp_path / 'fresh' / 'dictionary_structure.ssrd').read_bytes()

    cached = run_eval(tiny_config, manifest, tmp_path / 'before', cache_dir=cache)
    uncached = run_eval(tiny_config, manifest, tmp_path / 'before')
    assert cached.comparable() == uncached.comparable()
    assert stale.n_test == cached.n_test


def _write_external(tmp_path, seed):
    rng = np.random.default_rng(seed)
    n_rows, per_image = 8, 58
    paths = {}
    for name, rows, dim in (('global', n_rows, 8), ('structure', n_rows * per_image, 16),
                            ('object', n_rows * per_image, 16)):
        paths[name] = tmp_path / f'{name}.ssrf'
        write_feature_file(paths[name], np.abs(rng.standard_normal((rows, dim))))
    return paths


def test_feature_cache_follows_overwritten_feature_files(tmp_path, tiny_config):
    labels = tmp_path / 'labels.txt'
    labels.write_text('\n'.join(['street'] * 4 + ['forest'] * 4) + '\n', encoding='utf-8')
    manifest = import_feature_labels(labels, tmp_path / 'data', test_fraction=0.25)
    paths = _write_external(tmp_path, seed=0)
    external = tiny_config.with_overrides({'features': {
        'mode': 'external',
        'global_file': str(paths['global']),
        'structure_file': str(paths['structure']),
        'object_file': str(paths['object']),
    }})
    cache = tmp_path / 'cache'
    run_train(external, manifest, tmp_path / 'before', cache)

    _write_external(tmp_path, seed=1)
    run_train(external, manifest, tmp_path / 'cached', cache)
    run_train(external, manifest, tmp_path / 'fresh')
    for artifact in ('dictionary_structure.ssrd', 'dictionary_object.ssrd', 'svm_combined.ssrm'):
        assert (tmp_path / 'cached' / artifact).read_bytes() == (tmp_path / 'fresh' / artifact).read_bytes()
    assert (tmp_path / 'before' / 'dictionary_object.ssrd').read_bytes() != \
        (tmp_path / 'fresh' / 'dictionary_object.ssrd').read_bytes()


def _small_ablation(tmp_path, variant):
    out = tmp_path / variant
    generate_synthetic(out, classes=3, size=48, train=12, test=6, seed=0, variant=variant)
    manifest = load_manifest(out)
    config = PipelineConfig().with_overrides({
        'features': {'image_width': 48, 'image_height': 48},
        'dictionary': {'words_per_scale': [8, 24], 'epochs': 2, 'kmeans_iters': 10, 'inner_sweeps': 10},
        'classifier': {'C': 10.0, 'epochs': 200},
        'pipeline': {'workers': 1},
    })
    run_train(config, manifest, tmp_path / 'artifacts')
    return run_ablation(config, manifest, tmp_path / 'artifacts').ablation


def test_ablation_objects_favour_local_evidence(tmp_path):
    accuracy = _small_ablation(tmp_path, 'objects')
    assert accuracy['combined'] >= accuracy['global']


def test_ablation_backgrounds_need_no_local_evidence(tmp_path):
    accuracy = _small_ablation(tmp_path, 'background')
    assert abs(accuracy['combined'] - accuracy['global']) <= 0.05


@pytest.fixture(scope='module')
def benchmark(tmp_path_factory):
    """The 4-class, 64px synthetic benchmark trained with the synthetic preset"""
    root = tmp_path_factory.mktemp('benchmark')
    generate_synthetic(root / 'synthetic', classes=4, size=64, train=50, test=20, seed=0)
    manifest = load_manifest(root / 'synthetic')
    config = preset_config('synthetic')
    run_train(config, manifest, root / 'artifacts', root / 'cache')
    return config, manifest, root


@pytest.mark.slow
def test_synthetic_benchmark(benchmark):
    config, manifest, root = benchmark
    report = run_eval(config, manifest, root / 'artifacts', cache_dir=root / 'cache')
    assert report.overall >= 0.8
    assert report.overall >= report.global_overall


@pytest.mark.slow
def test_robustness_direction(benchmark):
    config, manifest, root = benchmark
    report = run_eval(config, manifest, root / 'artifacts', specs=config.perturb.grid(), cache_dir=root / 'cache')
    rows = {(row.kind, row.n): row for row in report.rows}
    assert set(rows) == {(kind, n) for kind in ('occlusion', 'noise') for n in (10, 8, 6, 4)}
    assert all(row.seeds == 5 for row in rows.values())
    for kind in ('occlusion', 'noise'):
        row = rows[(kind, 4)]
        assert report.overall - row.accuracy <= report.global_overall - row.global_accuracy
