"""
Pipeline Stages
Extraction (or ingestion), PCA, dictionary training and per-image coding/pooling/assembly
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from app.errors import (
    DataError,
    DimensionMismatchError,
    EmptyInputError,
    InvalidParameterError,
    SceneCodingError,
    StageError,
    UsageError,
)
from app.models import (
    DatasetManifest,
    Dictionary,
    ImageDims,
    ManifestSample,
    PcaModel,
    Segment,
    SourceTag,
    l2_normalize_rows,
)
from app.modules.features.extractor import BuiltinExtractor, extract_image
from app.modules.features.feature_io import read_feature_csv, read_feature_file
from app.modules.features.image_io import load_image
from app.modules.features.pca import pca_fit, pca_transform_matrix
from app.modules.geometry.patch_grid import multi_scale_patches, scale_region_counts
from app.modules.pipeline.cache import StageCache, cache_key
from app.modules.pipeline.manifest import is_row_ref, resolve, row_index
from app.modules.pipeline.pipeline_config import FeatureMode, PipelineConfig
from app.modules.robustness.perturb import PerturbationSpec, apply, derive_seed
from app.modules.sparse.coding import code_matrix
from app.modules.sparse.dictionary import build_initial_dictionary, learn, split_words
from app.modules.sparse.pooling import assemble, pool_by_scale
from app.utils.storage import sha256_file

logger = logging.getLogger(__name__)

LOCAL_TAGS = (SourceTag.STRUCTURE, SourceTag.OBJECT)


@contextmanager
def stage(name: str):
    """Attach the stage name to any error raised inside the block"""
    try:
        yield
    except StageError:
        raise
    except SceneCodingError as e:
        logger.error(f"Stage {name} failed: {e}")
        raise StageError(name, e) from e


def _guard(stage_name: str, ref: str, fn, *args):
    try:
        return fn(*args)
    except StageError as e:
        if e.stage != stage_name:
            raise
        # row-level failure inside one image
        logger.error(f"Stage {stage_name} failed on {ref}, row {e.sample}: {e.cause}")
        raise StageError(stage_name, e.cause, sample=f"{ref}, row {e.sample}") from e
    except SceneCodingError as e:
        logger.error(f"Stage {stage_name} failed on {ref}: {e}")
        raise StageError(stage_name, e, sample=ref) from e


# ============================================
# Features
# ============================================

@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Features of one split: a global row per image, local rows per patch in canonical order"""
    refs: Tuple[str, ...]
    labels: np.ndarray
    global_matrix: np.ndarray
    local: Dict[SourceTag, np.ndarray]
    scale_ids: np.ndarray
    offsets: np.ndarray

    def __len__(self):
        return len(self.refs)

    def rows(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def per_scale(self, matrix: np.ndarray) -> List[Tuple[int, np.ndarray]]:
        return [(int(s), matrix[self.scale_ids == s]) for s in np.unique(self.scale_ids)]


def _as_feature_set(samples: Sequence[ManifestSample], global_rows, local_rows, scale_rows) -> FeatureSet:
    counts = [len(s) for s in scale_rows]
    return FeatureSet(
        refs=tuple(s.ref for s in samples),
        labels=np.array([s.label for s in samples], dtype=np.int64),
        global_matrix=np.vstack(global_rows).astype(np.float32),
        local={tag: np.vstack([rows[tag] for rows in local_rows]).astype(np.float32) for tag in LOCAL_TAGS},
        scale_ids=np.concatenate(scale_rows).astype(np.int64),
        offsets=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
    )


def _extractors(config: PipelineConfig):
    structure = BuiltinExtractor(config.features.extractor(SourceTag.STRUCTURE))
    return {
        SourceTag.STRUCTURE: structure,
        SourceTag.OBJECT: BuiltinExtractor(config.features.extractor(SourceTag.OBJECT)),
        SourceTag.GLOBAL: structure,
    }


def _extract_builtin(config: PipelineConfig, manifest: DatasetManifest, samples: Sequence[ManifestSample],
                     spec: Optional[PerturbationSpec], workers: int) -> FeatureSet:
    extractors = _extractors(config)

    def one(index: int, sample: ManifestSample):
        img = load_image(resolve(manifest, sample))
        if spec is not None:
            img = apply(img, spec, seed=derive_seed(spec.seed, index)).image
        return extract_image(img, config.scales, extractors)

    results = Parallel(n_jobs=workers, prefer='threads')(
        delayed(_guard)('extract', s.ref, one, i, s) for i, s in enumerate(samples)
    )
    return _as_feature_set(
        samples,
        [r.global_vector for r in results],
        [r.local for r in results],
        [r.scale_ids for r in results],
    )


def _read_matrix(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == '.csv':
        return read_feature_csv(path)
    return read_feature_file(path)


def _ingest_external(config: PipelineConfig, samples: Sequence[ManifestSample]) -> FeatureSet:
    features = config.features
    missing = [t.value for t in (SourceTag.GLOBAL, *LOCAL_TAGS) if not features.external_file(t)]
    if missing:
        raise InvalidParameterError(f"External feature mode needs files for {missing}")
    matrices = {t: _read_matrix(features.external_file(t)) for t in (SourceTag.GLOBAL, *LOCAL_TAGS)}

    dims = ImageDims(width=features.image_width, height=features.image_height)
    patch_scales = np.array([r.scale_id for r in multi_scale_patches(dims, config.scales)], dtype=np.int64)
    per_image = patch_scales.size

    global_rows, local_rows, scale_rows = [], [], []
    for sample in samples:
        if not is_row_ref(sample.ref):
            raise DataError(f"External feature mode needs row:<i> references, got {sample.ref!r}")
        i = row_index(sample.ref)
        if i >= matrices[SourceTag.GLOBAL].shape[0]:
            raise DataError(f"{sample.ref} is beyond the {matrices[SourceTag.GLOBAL].shape[0]} global rows")
        local = {}
        for tag in LOCAL_TAGS:
            start, stop = i * per_image, (i + 1) * per_image
            if stop > matrices[tag].shape[0]:
                raise DimensionMismatchError(
                    f"{tag.value} file has {matrices[tag].shape[0]} rows; {sample.ref} needs rows {start}..{stop - 1}"
                )
            local[tag] = matrices[tag][start:stop]
        global_rows.append(matrices[SourceTag.GLOBAL][i])
        local_rows.append(local)
        scale_rows.append(patch_scales)
    return _as_feature_set(samples, global_rows, local_rows, scale_rows)


FEATURE_MATRICES = ('global', 'structure', 'object', 'scale_ids', 'offsets')


def _file_digest(path) -> str:
    path = Path(path)
    # missing inputs are reported by the extraction itself
    return sha256_file(path) if path.is_file() else 'missing'


def input_digest(config: PipelineConfig, manifest: DatasetManifest, samples: Sequence[ManifestSample]) -> str:
    """Content hash of the files the features of `samples` are read from"""
    if config.features.mode == FeatureMode.EXTERNAL:
        paths = [config.features.external_file(t) or '' for t in (SourceTag.GLOBAL, *LOCAL_TAGS)]
    else:
        paths = [resolve(manifest, s) for s in samples]
    return cache_key([_file_digest(p) if p else '' for p in paths])


def extract_features(config: PipelineConfig, manifest: DatasetManifest, samples: Sequence[ManifestSample],
                     spec: Optional[PerturbationSpec] = None, cache: StageCache = None,
                     workers: int = 1) -> FeatureSet:
    """Features of `samples`, optionally under a perturbation; cached by extraction fingerprint"""
    if not samples:
        raise EmptyInputError("No samples to extract features from")
    external = config.features.mode == FeatureMode.EXTERNAL
    if external and spec is not None:
        raise UsageError("Perturbations apply to images; they are unavailable for ingested feature files")

    perturbation = 'clean' if spec is None else f'{spec.kind.value}:{spec.divisor}:{spec.count}:{spec.seed}'
    key = cache_key(
        config.stage_fingerprint('features'), manifest.root or '', [s.ref for s in samples],
        input_digest(config, manifest, samples), perturbation,
    )
    cache = cache or StageCache(None)
    cached = cache.load('features', key, FEATURE_MATRICES)
    if cached is not None:
        return FeatureSet(
            refs=tuple(s.ref for s in samples),
            labels=np.array([s.label for s in samples], dtype=np.int64),
            global_matrix=cached['global'],
            local={SourceTag.STRUCTURE: cached['structure'], SourceTag.OBJECT: cached['object']},
            scale_ids=cached['scale_ids'][:, 0].astype(np.int64),
            offsets=cached['offsets'][:, 0].astype(np.int64),
        )

    if external:
        features = _ingest_external(config, samples)
    else:
        features = _extract_builtin(config, manifest, samples, spec, workers)
    logger.info(
        f"Extracted {len(features)} images ({perturbation}): global d={features.global_matrix.shape[1]}, "
        + ', '.join(f"{t.value} {m.shape}" for t, m in features.local.items())
    )
    cache.save('features', key, {
        'global': features.global_matrix,
        'structure': features.local[SourceTag.STRUCTURE],
        'object': features.local[SourceTag.OBJECT],
        'scale_ids': features.scale_ids[:, None],
        'offsets': features.offsets[:, None],
    }, meta={'samples': len(features), 'perturbation': perturbation})
    return features


# ============================================
# PCA
# ============================================

def fit_local_pca(config: PipelineConfig, features: FeatureSet) -> Dict[SourceTag, Optional[PcaModel]]:
    """One PCA model per local source; None when the configured dim does not reduce"""
    models = {}
    for tag in LOCAL_TAGS:
        X = features.local[tag].astype(np.float64)
        d = X.shape[1]
        p = config.pca.output_dim
        if p >= d:
            logger.info(f"PCA skipped for {tag.value}: output dim {p} >= input dim {d}")
            models[tag] = None
            continue
        if p > X.shape[0] - 1:
            logger.warning(f"PCA dim for {tag.value} clipped from {p} to {X.shape[0] - 1} samples")
            p = X.shape[0] - 1
        models[tag] = pca_fit(X, p)
    return models


def reduce_local(features: FeatureSet, pca_models: Dict[SourceTag, Optional[PcaModel]]) -> Dict[SourceTag, np.ndarray]:
    """PCA projection (when fitted) followed by row normalisation"""
    reduced = {}
    for tag in LOCAL_TAGS:
        X = features.local[tag].astype(np.float64)
        model = pca_models.get(tag)
        if model is not None:
            X = pca_transform_matrix(model, X)
        reduced[tag] = l2_normalize_rows(X)
    return reduced


# ============================================
# Dictionaries
# ============================================

def words_per_scale(config: PipelineConfig) -> List[int]:
    section = config.dictionary
    n_scales = len(config.scales.divisors)
    if section.words_per_scale:
        if len(section.words_per_scale) != n_scales:
            raise InvalidParameterError(
                f"words_per_scale has {len(section.words_per_scale)} entries for {n_scales} scales"
            )
        return list(section.words_per_scale)
    dims = ImageDims(width=config.features.image_width, height=config.features.image_height)
    return split_words(section.total_words(), scale_region_counts(dims, config.scales))


def train_dictionary(config: PipelineConfig, tag: SourceTag, Y: np.ndarray,
                     scale_ids: np.ndarray) -> Tuple[Dictionary, List[float]]:
    """k-means initial dictionary per scale, then alternating minimisation on all local rows"""
    per_scale = [(int(s), Y[scale_ids == s]) for s in config.scales.scale_ids]
    D0 = build_initial_dictionary(per_scale, words_per_scale(config), tag, config.dictionary.kmeans_config())
    D, trace = learn(D0, Y, config.dictionary.learn_config())
    return D.quantized(), trace


# ============================================
# Coding, pooling & assembly
# ============================================

def encode_representations(config: PipelineConfig, features: FeatureSet, reduced: Dict[SourceTag, np.ndarray],
                           dictionaries: Dict[SourceTag, Dictionary], workers: int = 1,
                           layout: Sequence[Segment] = None) -> Tuple[np.ndarray, Tuple[Segment, ...]]:
    """n x D scene representations (float32 precision) and their layout"""
    scales = config.scales.scale_ids

    def one(i: int):
        rows = features.rows(i)
        pooled = []
        for tag in LOCAL_TAGS:
            X = code_matrix(dictionaries[tag], reduced[tag][rows], config.coding)
            pooled.extend(pool_by_scale(X, features.scale_ids[rows], config.pooling.mode, tag, scales))
        return assemble(features.global_matrix[i].astype(np.float64), pooled, layout)

    reps = Parallel(n_jobs=workers, prefer='threads')(
        delayed(_guard)('coding', ref, one, i) for i, ref in enumerate(features.refs)
    )
    matrix = np.vstack([r.values for r in reps]).astype(np.float32).astype(np.float64)
    return matrix, reps[0].layout
