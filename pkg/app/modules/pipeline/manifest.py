"""
Dataset Manifest
`manifest.tsv` (class_name<TAB>path) and `split.tsv` (path<TAB>train|test) handling
"""
import logging
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from app.errors import ManifestError
from app.models import DatasetManifest, ManifestSample
from app.modules.features.image_io import is_image_file
from app.modules.robustness.perturb import derive_seed
from app.utils.storage import atomic_write_text

logger = logging.getLogger(__name__)

MANIFEST_FILE = 'manifest.tsv'
SPLIT_FILE = 'split.tsv'
SPLITS = ('train', 'test')
ROW_PREFIX = 'row:'


def is_row_ref(ref: str) -> bool:
    return ref.startswith(ROW_PREFIX)


def row_index(ref: str) -> int:
    try:
        index = int(ref[len(ROW_PREFIX):])
    except ValueError as e:
        raise ManifestError(f"Bad feature row reference {ref!r}") from e
    if index < 0:
        raise ManifestError(f"Bad feature row reference {ref!r}")
    return index


def resolve(manifest: DatasetManifest, sample: ManifestSample) -> Path:
    """Absolute image path of a sample"""
    path = Path(sample.ref)
    if not path.is_absolute() and manifest.root:
        path = Path(manifest.root) / path
    return path


def _read_tsv(path: Path, columns: List[str]) -> pd.DataFrame:
    if not path.is_file():
        raise ManifestError(f"Missing {path.name} in {path.parent}")
    try:
        frame = pd.read_csv(path, sep='\t', header=None, names=columns, dtype=str,
                            keep_default_na=False, skip_blank_lines=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ManifestError(f"{path}: {e}") from e
    if frame.isna().any().any() or (frame == '').any().any():
        raise ManifestError(f"{path}: every line needs {len(columns)} tab-separated fields")
    return frame


def load_manifest(directory) -> DatasetManifest:
    """Read and validate a dataset directory's manifest and split files"""
    directory = Path(directory)
    entries = _read_tsv(directory / MANIFEST_FILE, ['class_name', 'path'])
    split = _read_tsv(directory / SPLIT_FILE, ['path', 'split'])
    if entries.empty:
        raise ManifestError(f"{directory / MANIFEST_FILE} lists no samples")

    bad = sorted(set(split['split']) - set(SPLITS))
    if bad:
        raise ManifestError(f"Unknown split names {bad}; expected train or test")
    distinct = split.drop_duplicates().groupby('path')['split'].nunique()
    both = distinct[distinct > 1].index.tolist()
    if both:
        raise ManifestError(f"Samples listed in both splits: {both[:5]}")
    duplicated = entries['path'][entries['path'].duplicated()].tolist()
    if duplicated:
        raise ManifestError(f"Samples listed twice in the manifest: {duplicated[:5]}")
    membership = dict(zip(split['path'], split['split']))
    missing = sorted(set(entries['path']) - set(membership))
    if missing:
        raise ManifestError(f"Samples without a split: {missing[:5]}")
    unknown = sorted(set(membership) - set(entries['path']))
    if unknown:
        raise ManifestError(f"Split entries not in the manifest: {unknown[:5]}")

    classes = tuple(pd.unique(entries['class_name']))
    index = {name: i for i, name in enumerate(classes)}
    samples = tuple(
        ManifestSample(ref=row.path, label=index[row.class_name], split=membership[row.path])
        for row in entries.itertuples(index=False)
    )
    manifest = DatasetManifest(classes=classes, samples=samples, root=str(directory.resolve()))
    counts = {name: len(manifest.split(name)) for name in SPLITS}
    logger.info(f"Loaded manifest {directory}: {len(classes)} classes, {counts}")
    return manifest


def save_manifest(manifest: DatasetManifest, directory):
    directory = Path(directory)
    for sample in manifest.samples:
        if not 0 <= sample.label < len(manifest.classes):
            raise ManifestError(f"Label {sample.label} of {sample.ref} outside the class range")
        if sample.split not in SPLITS:
            raise ManifestError(f"Unknown split {sample.split!r} for {sample.ref}")
    entries = pd.DataFrame(
        [(manifest.classes[s.label], s.ref) for s in manifest.samples], columns=['class_name', 'path']
    )
    split = pd.DataFrame([(s.ref, s.split) for s in manifest.samples], columns=['path', 'split'])
    atomic_write_text(directory / MANIFEST_FILE, entries.to_csv(sep='\t', header=False, index=False))
    atomic_write_text(directory / SPLIT_FILE, split.to_csv(sep='\t', header=False, index=False))
    logger.info(f"Wrote manifest for {len(manifest.samples)} samples to {directory}")


def _split_class(items: Sequence[str], test_fraction: float, seed: int) -> Dict[str, str]:
    n = len(items)
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 0), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    test = {items[i] for i in order[:n_test]}
    return {item: ('test' if item in test else 'train') for item in items}


def _build(grouped: Dict[str, List[str]], test_fraction: float, seed: int, root=None) -> DatasetManifest:
    if not 0.0 <= test_fraction < 1.0:
        raise ManifestError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    classes = tuple(grouped)
    samples = []
    for label, name in enumerate(classes):
        assignment = _split_class(grouped[name], test_fraction, derive_seed(seed, label))
        samples.extend(ManifestSample(ref=ref, label=label, split=assignment[ref]) for ref in grouped[name])
    return DatasetManifest(classes=classes, samples=tuple(samples), root=root)


def import_dataset(root, out=None, test_fraction: float = 0.3, seed: int = 0) -> DatasetManifest:
    """
    Directory-per-class dataset -> manifest + seeded per-class split.
    Classes are the sorted subdirectory names, paths are relative to `root`.
    """
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"Dataset root {root} is not a directory")
    grouped: Dict[str, List[str]] = {}
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        images = sorted(p.relative_to(root).as_posix() for p in class_dir.rglob('*') if is_image_file(p))
        if images:
            grouped[class_dir.name] = images
        else:
            logger.warning(f"Skipping {class_dir}: no images")
    if not grouped:
        raise ManifestError(f"No class directories with images under {root}")
    manifest = _build(grouped, test_fraction, seed, root=str(root.resolve()))
    save_manifest(manifest, out or root)
    return manifest


def import_feature_labels(labels_path, out, test_fraction: float = 0.3, seed: int = 0) -> DatasetManifest:
    """One class name per line, line i labelling feature row i -> `row:<i>` manifest"""
    labels_path = Path(labels_path)
    if not labels_path.is_file():
        raise ManifestError(f"Label file not found: {labels_path}")
    names = [line.strip() for line in labels_path.read_text(encoding='utf-8').splitlines() if line.strip()]
    if not names:
        raise ManifestError(f"{labels_path} lists no rows")
    grouped: Dict[str, List[str]] = {}
    for i, name in enumerate(names):
        grouped.setdefault(name, []).append(f'{ROW_PREFIX}{i}')
    manifest = _build(grouped, test_fraction, seed, root=str(Path(out).resolve()))
    save_manifest(manifest, out)
    return manifest
