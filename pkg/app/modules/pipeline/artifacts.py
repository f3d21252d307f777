"""
Artifacts
Layout of a trained artifact directory, fingerprint-checked loading and inspection
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

from app.errors import ArtifactError, FingerprintMismatchError
from app.models import Dictionary, LinearSvmModel, PcaModel, Segment, SourceTag
from app.modules.classification.svm import load_model, save_model
from app.modules.features.pca import load_pca, save_pca
from app.modules.sparse.dictionary import load_dictionary, save_dictionary
from app.modules.sparse.pooling import layout_to_dict, load_layout, save_layout
from app.utils.storage import atomic_write_json, atomic_write_text, sha256_file

logger = logging.getLogger(__name__)

LOCAL_TAGS = (SourceTag.STRUCTURE, SourceTag.OBJECT)
MODEL_VARIANTS = ('combined', 'global', 'local')

LAYOUT_FILE = 'layout.json'
TRAINING_LOG = 'training_log.json'
CONFIG_FILE = 'config.ini'
TRAIN_REPRESENTATIONS = 'train_representations.ssrf'


def pca_file(tag: SourceTag) -> str:
    return f'pca_{SourceTag(tag).value}.ssrp'


def dictionary_file(tag: SourceTag) -> str:
    return f'dictionary_{SourceTag(tag).value}.ssrd'


def model_file(variant: str) -> str:
    return f'svm_{variant}.ssrm'


@dataclass(frozen=True, eq=False)
class TrainedArtifacts:
    """Everything evaluation needs, all produced under one model fingerprint"""
    fingerprint: str
    classes: Tuple[str, ...]
    pca: Dict[SourceTag, Optional[PcaModel]]
    dictionaries: Dict[SourceTag, Dictionary]
    models: Dict[str, LinearSvmModel]
    layout: Tuple[Segment, ...]


def save_artifacts(artifact_dir, artifacts: TrainedArtifacts, training_log: dict, config_text: str):
    artifact_dir = Path(artifact_dir)
    fp = artifacts.fingerprint
    for tag in LOCAL_TAGS:
        if artifacts.pca.get(tag) is not None:
            save_pca(artifact_dir / pca_file(tag), artifacts.pca[tag], fp)
        save_dictionary(artifact_dir / dictionary_file(tag), artifacts.dictionaries[tag], fp)
    for variant, model in artifacts.models.items():
        save_model(artifact_dir / model_file(variant), model, fp)
    save_layout(artifact_dir / LAYOUT_FILE, artifacts.layout)
    atomic_write_text(artifact_dir / CONFIG_FILE, config_text)
    log = {
        **training_log,
        'fingerprint': fp,
        'classes': list(artifacts.classes),
        'pca': {t.value: (pca_file(t) if artifacts.pca.get(t) is not None else None) for t in LOCAL_TAGS},
        'models': sorted(artifacts.models),
        'layout': layout_to_dict(artifacts.layout),
    }
    atomic_write_json(artifact_dir / TRAINING_LOG, log)
    logger.info(f"Artifacts written to {artifact_dir} (fingerprint {fp})")


def read_training_log(artifact_dir) -> dict:
    path = Path(artifact_dir) / TRAINING_LOG
    if not path.is_file():
        raise ArtifactError(f"No trained artifacts in {artifact_dir} (missing {TRAINING_LOG}); run train first")
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{path}: invalid JSON: {e}") from e


def _check(found: str, expected: str, path: Path):
    if found != expected:
        raise FingerprintMismatchError(expected, found, artifact=path.name)


def load_artifacts(artifact_dir, expected_fingerprint: str) -> TrainedArtifacts:
    """Load every artifact, refusing any whose fingerprint differs from `expected_fingerprint`"""
    artifact_dir = Path(artifact_dir)
    log = read_training_log(artifact_dir)
    _check(log.get('fingerprint'), expected_fingerprint, artifact_dir / TRAINING_LOG)

    pca, dictionaries, models = {}, {}, {}
    for tag in LOCAL_TAGS:
        pca[tag] = None
        if log['pca'].get(tag.value):
            path = artifact_dir / log['pca'][tag.value]
            pca[tag], fp = load_pca(path)
            _check(fp, expected_fingerprint, path)
        path = artifact_dir / dictionary_file(tag)
        dictionaries[tag], fp = load_dictionary(path)
        _check(fp, expected_fingerprint, path)
    for variant in log['models']:
        path = artifact_dir / model_file(variant)
        models[variant], fp = load_model(path)
        _check(fp, expected_fingerprint, path)

    return TrainedArtifacts(
        fingerprint=expected_fingerprint,
        classes=tuple(log['classes']),
        pca=pca,
        dictionaries=dictionaries,
        models=models,
        layout=load_layout(artifact_dir / LAYOUT_FILE),
    )


def inspect_artifacts(artifact_dir) -> dict:
    """Metadata of a trained artifact directory: fingerprint, shapes, traces and file digests"""
    artifact_dir = Path(artifact_dir)
    log = read_training_log(artifact_dir)
    info = {
        'artifact_dir': str(artifact_dir),
        'fingerprint': log.get('fingerprint'),
        'config_fingerprint': log.get('config_fingerprint'),
        'classes': log.get('classes'),
        'created_at': log.get('created_at'),
        'train_accuracy': log.get('train_accuracy'),
        'dictionaries': {},
        'pca': {},
        'models': {},
        'files': {},
    }
    for tag in LOCAL_TAGS:
        D, fp = load_dictionary(artifact_dir / dictionary_file(tag))
        trace = log.get('objective_traces', {}).get(tag.value, [])
        info['dictionaries'][tag.value] = {
            'dim': D.dim,
            'columns': D.columns,
            'blocks': [[b.scale_id, b.start, b.stop] for b in D.scale_blocks],
            'fingerprint': fp,
            'objective_first': trace[0] if trace else None,
            'objective_last': trace[-1] if trace else None,
        }
        pca_name = log.get('pca', {}).get(tag.value)
        if pca_name:
            model, fp = load_pca(artifact_dir / pca_name)
            info['pca'][tag.value] = {
                'input_dim': model.input_dim,
                'output_dim': model.output_dim,
                'retained_variance': float(model.explained_variance_ratio.sum()),
                'fingerprint': fp,
            }
        else:
            info['pca'][tag.value] = None
    for variant in log.get('models', []):
        model, fp = load_model(artifact_dir / model_file(variant))
        info['models'][variant] = {'classes': model.n_classes, 'dim': model.dim, 'C': model.C, 'fingerprint': fp}
    for path in sorted(artifact_dir.iterdir()):
        if path.is_file():
            info['files'][path.name] = {'bytes': path.stat().st_size, 'sha256': sha256_file(path)}
    return info
