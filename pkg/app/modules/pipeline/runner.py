"""
Pipeline Runner
run_train, run_eval and run_ablation: extract -> PCA -> dictionaries -> code/pool -> classify
"""
import hashlib
import logging
import time
from collections import OrderedDict
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import EmptyInputError, ManifestError, UsageError
from app.models import DatasetManifest, Dictionary, LabeledSet, ManifestSample, ScaleBlock, SourceTag
from app.modules.classification.svm import confusion_matrix, evaluate, quantized, relative_accuracy, train
from app.modules.features.feature_io import write_feature_file
from app.modules.pipeline.artifacts import (
    LOCAL_TAGS,
    TRAIN_REPRESENTATIONS,
    TrainedArtifacts,
    load_artifacts,
    save_artifacts,
)
from app.modules.pipeline.cache import StageCache, cache_key
from app.modules.pipeline.pipeline_config import FeatureMode, PipelineConfig, dump_ini
from app.modules.pipeline.reports import EvalReport, RobustnessRow
from app.modules.pipeline.stages import (
    encode_representations,
    extract_features,
    fit_local_pca,
    input_digest,
    reduce_local,
    stage,
    train_dictionary,
    words_per_scale,
)
from app.modules.robustness.perturb import PerturbationSpec
from app.modules.sparse.pooling import GLOBAL_SEGMENT, local_segment_names, save_layout, select_matrix, sidecar_path

logger = logging.getLogger(__name__)


def model_fingerprint(config: PipelineConfig) -> str:
    """Fingerprint embedded in trained artifacts; perturbation settings do not invalidate them"""
    return config.stage_fingerprint('classifier')


def _present(names, values) -> Dict[str, float]:
    """Per-class values keyed by name; classes without test samples (NaN) are left out"""
    return {name: float(v) for name, v in zip(names, values) if not np.isnan(v)}


def _dictionary_digest(dictionaries: Dict[SourceTag, Dictionary]) -> str:
    digest = hashlib.sha256()
    for tag in LOCAL_TAGS:
        digest.update(np.ascontiguousarray(dictionaries[tag].atoms, dtype=np.float32).tobytes())
    return digest.hexdigest()[:16]


# ============================================
# Shared stage helpers
# ============================================

def _dictionaries(config: PipelineConfig, reduced: Dict[SourceTag, np.ndarray], scale_ids: np.ndarray,
                  cache: StageCache) -> Tuple[Dict[SourceTag, Dictionary], Dict[str, List[float]]]:
    dictionaries, traces = {}, {}
    for tag in LOCAL_TAGS:
        data = hashlib.sha256(np.ascontiguousarray(reduced[tag]).tobytes()).hexdigest()
        key = cache_key(config.stage_fingerprint('dictionary'), tag.value, data)
        cached = cache.load('dictionary', key, ['atoms'])
        if cached is not None:
            words = words_per_scale(config)
            starts = np.concatenate([[0], np.cumsum(words)])
            blocks = tuple(
                ScaleBlock(scale_id=s, start=int(starts[i]), stop=int(starts[i + 1]))
                for i, s in enumerate(config.scales.scale_ids)
            )
            dictionaries[tag] = Dictionary(cached['atoms'].astype(np.float64), blocks, tag)
            traces[tag.value] = cache.load_meta('dictionary', key).get('trace', [])
            continue
        dictionaries[tag], traces[tag.value] = train_dictionary(config, tag, reduced[tag], scale_ids)
        cache.save('dictionary', key, {'atoms': dictionaries[tag].atoms}, meta={'trace': traces[tag.value]})
    return dictionaries, traces


def _representations(config: PipelineConfig, manifest: DatasetManifest, samples: Sequence[ManifestSample],
                     pca_models, dictionaries, cache: StageCache, workers: int,
                     spec: PerturbationSpec = None, layout=None):
    """Labels, representation matrix and layout of `samples`, reusing a cached matrix when the layout is known"""
    perturbation = 'clean' if spec is None else f'{spec.kind.value}:{spec.divisor}:{spec.count}:{spec.seed}'
    key = cache_key(
        config.stage_fingerprint('coding'), _dictionary_digest(dictionaries), manifest.root or '',
        [s.ref for s in samples], input_digest(config, manifest, samples), perturbation,
    )
    labels = np.array([s.label for s in samples], dtype=np.int64)
    cached = cache.load('representations', key, ['values']) if layout is not None else None
    if cached is not None:
        return labels, cached['values'].astype(np.float64), tuple(layout)
    with stage('extract'):
        features = extract_features(config, manifest, samples, spec, cache, workers)
    with stage('pca'):
        reduced = reduce_local(features, pca_models)
    with stage('coding'):
        R, layout = encode_representations(config, features, reduced, dictionaries, workers, layout)
    cache.save('representations', key, {'values': R}, meta={'samples': len(samples), 'perturbation': perturbation})
    return labels, R, layout


def _labeled(R: np.ndarray, labels: np.ndarray, layout, variant: str) -> LabeledSet:
    if variant == 'combined':
        return LabeledSet(R, labels)
    names = [GLOBAL_SEGMENT] if variant == 'global' else local_segment_names(layout)
    return LabeledSet(select_matrix(R, layout, names), labels)


# ============================================
# Training
# ============================================

def run_train(config: PipelineConfig, manifest: DatasetManifest, artifact_dir, cache_dir=None,
              workers: int = None) -> TrainedArtifacts:
    """Fit every model on the train split and persist them with the model fingerprint"""
    started = time.perf_counter()
    workers = workers or config.pipeline.workers
    cache = StageCache(cache_dir, config.pipeline.use_cache)
    samples = manifest.split('train')
    with stage('manifest'):
        if not samples:
            raise EmptyInputError("The train split is empty")
    logger.info(f"Training on {len(samples)} images, fingerprint {config.fingerprint}")

    timings = OrderedDict()
    tic = time.perf_counter()
    with stage('extract'):
        features = extract_features(config, manifest, samples, None, cache, workers)
    timings['extract'] = time.perf_counter() - tic

    tic = time.perf_counter()
    with stage('pca'):
        pca_models = fit_local_pca(config, features)
        reduced = reduce_local(features, pca_models)
    timings['pca'] = time.perf_counter() - tic

    tic = time.perf_counter()
    with stage('dictionary'):
        dictionaries, traces = _dictionaries(config, reduced, features.scale_ids, cache)
    timings['dictionary'] = time.perf_counter() - tic

    tic = time.perf_counter()
    with stage('coding'):
        R, layout = encode_representations(config, features, reduced, dictionaries, workers)
    timings['coding'] = time.perf_counter() - tic

    tic = time.perf_counter()
    models, train_accuracy = {}, {}
    with stage('classifier'):
        for variant in ('combined', 'global', 'local'):
            data = _labeled(R, features.labels, layout, variant)
            models[variant] = quantized(train(data, cfg=config.classifier))
            train_accuracy[variant], _ = evaluate(models[variant], data)
    timings['classifier'] = time.perf_counter() - tic

    artifacts = TrainedArtifacts(
        fingerprint=model_fingerprint(config),
        classes=tuple(manifest.classes),
        pca=pca_models,
        dictionaries=dictionaries,
        models=models,
        layout=layout,
    )
    artifact_dir = Path(artifact_dir)
    training_log = {
        'config_fingerprint': config.fingerprint,
        'stage_fingerprints': {s: config.stage_fingerprint(s) for s in ('features', 'pca', 'dictionary', 'coding')},
        'created_at': datetime.now(timezone.utc).isoformat(timespec='seconds'),
        'n_train': len(samples),
        'words_per_scale': words_per_scale(config),
        'objective_traces': traces,
        'train_accuracy': train_accuracy,
        'timings': {k: round(v, 3) for k, v in timings.items()},
        'total_seconds': round(time.perf_counter() - started, 3),
    }
    save_artifacts(artifact_dir, artifacts, training_log, dump_ini(config))
    write_feature_file(artifact_dir / TRAIN_REPRESENTATIONS, R)
    save_layout(sidecar_path(artifact_dir / TRAIN_REPRESENTATIONS), layout)
    logger.info(f"Training finished: train accuracy {train_accuracy}")
    return artifacts


# ============================================
# Evaluation
# ============================================

def _test_split(manifest: DatasetManifest, artifacts: TrainedArtifacts) -> List[ManifestSample]:
    with stage('manifest'):
        if tuple(manifest.classes) != tuple(artifacts.classes):
            raise ManifestError(
                f"Manifest classes {list(manifest.classes)} differ from the trained classes {list(artifacts.classes)}"
            )
        samples = manifest.split('test')
        if not samples:
            raise EmptyInputError("The test split is empty")
    return samples


def run_eval(config: PipelineConfig, manifest: DatasetManifest, artifact_dir,
             specs: Optional[Sequence[PerturbationSpec]] = None, ablation: bool = False,
             cache_dir=None, workers: int = None) -> EvalReport:
    """
    Clean accuracy of the combined and global-only models on the test split, plus one
    row per (kind, n) averaged over seeds when perturbation specs are given.
    """
    workers = workers or config.pipeline.workers
    cache = StageCache(cache_dir, config.pipeline.use_cache)
    if specs and config.features.mode == FeatureMode.EXTERNAL:
        with stage('perturb'):
            raise UsageError("Perturbation evaluation needs images; this configuration ingests feature files")
    with stage('artifacts'):
        artifacts = load_artifacts(artifact_dir, model_fingerprint(config))
    samples = _test_split(manifest, artifacts)

    labels, R, layout = _representations(
        config, manifest, samples, artifacts.pca, artifacts.dictionaries, cache, workers, layout=artifacts.layout
    )
    combined = _labeled(R, labels, layout, 'combined')
    overall, per_class = evaluate(artifacts.models['combined'], combined)
    global_overall, global_per_class = evaluate(artifacts.models['global'], _labeled(R, labels, layout, 'global'))

    ablation_result = {}
    if ablation:
        local_overall, _ = evaluate(artifacts.models['local'], _labeled(R, labels, layout, 'local'))
        ablation_result = {'global': global_overall, 'local': local_overall, 'combined': overall}

    rows = _robustness_rows(config, manifest, samples, artifacts, specs or [], cache, workers)

    class_names = [artifacts.classes[int(label)] for label in artifacts.models['combined'].labels]
    report = EvalReport(
        overall=overall,
        per_class=_present(class_names, per_class),
        fingerprint=config.fingerprint,
        n_test=len(samples),
        global_overall=global_overall,
        rows=rows,
        ablation=ablation_result,
        relative=_present(class_names, relative_accuracy(per_class, global_per_class)),
        confusion=confusion_matrix(artifacts.models['combined'], combined).tolist(),
    )
    logger.info(f"Evaluation: combined {overall:.4f}, global-only {global_overall:.4f}, {len(rows)} robustness rows")
    return report


def _robustness_rows(config, manifest, samples, artifacts, specs, cache, workers) -> List[RobustnessRow]:
    grouped: Dict[Tuple[str, int], List[Tuple[float, float]]] = OrderedDict()
    for spec in specs:
        labels, R, layout = _representations(
            config, manifest, samples, artifacts.pca, artifacts.dictionaries, cache, workers,
            spec=spec, layout=artifacts.layout,
        )
        accuracy, _ = evaluate(artifacts.models['combined'], _labeled(R, labels, layout, 'combined'))
        global_accuracy, _ = evaluate(artifacts.models['global'], _labeled(R, labels, layout, 'global'))
        logger.info(f"{spec.label} seed={spec.seed}: combined {accuracy:.4f}, global-only {global_accuracy:.4f}")
        grouped.setdefault((spec.kind.value, spec.divisor), []).append((accuracy, global_accuracy))
    return [
        RobustnessRow(
            kind=kind,
            n=n,
            accuracy=float(np.mean([a for a, _ in results])),
            global_accuracy=float(np.mean([g for _, g in results])),
            seeds=len(results),
        )
        for (kind, n), results in grouped.items()
    ]


def run_ablation(config: PipelineConfig, manifest: DatasetManifest, artifact_dir, cache_dir=None,
                 workers: int = None) -> EvalReport:
    """Global-only, local-only and combined accuracies on the same test split"""
    return run_eval(config, manifest, artifact_dir, specs=None, ablation=True, cache_dir=cache_dir, workers=workers)
