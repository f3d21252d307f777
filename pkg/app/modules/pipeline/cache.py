"""
Stage Cache
On-disk cache of stage outputs keyed by stage fingerprint and input identity
"""
import hashlib
import json
import logging
import shutil
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np

from app.errors import FeatureFileError
from app.modules.features.feature_io import read_feature_file, write_feature_file
from app.utils.storage import atomic_write_json

logger = logging.getLogger(__name__)

COMPLETE_MARKER = 'complete.json'


def cache_key(*parts) -> str:
    """Stable 16-char key over strings and string sequences"""
    digest = hashlib.sha256()
    for part in parts:
        if isinstance(part, (list, tuple)):
            part = '\x1f'.join(str(p) for p in part)
        digest.update(str(part).encode('utf-8'))
        digest.update(b'\x1e')
    return digest.hexdigest()[:16]


class StageCache:
    """Directory per (stage, key) holding SSRF matrices and a completion marker"""

    def __init__(self, root, enabled: bool = True):
        self.root = Path(root) if root is not None else None
        self.enabled = enabled and root is not None

    def _entry(self, stage: str, key: str) -> Path:
        return self.root / stage / key

    def load(self, stage: str, key: str, names: Iterable[str]) -> Optional[Dict[str, np.ndarray]]:
        if not self.enabled:
            return None
        entry = self._entry(stage, key)
        if not (entry / COMPLETE_MARKER).is_file():
            return None
        try:
            matrices = {name: read_feature_file(entry / f'{name}.ssrf') for name in names}
        except FeatureFileError as e:
            logger.warning(f"Discarding unreadable cache entry {entry}: {e}")
            shutil.rmtree(entry, ignore_errors=True)
            return None
        logger.info(f"Cache hit {stage}/{key}")
        return matrices

    def load_meta(self, stage: str, key: str) -> dict:
        """Metadata stored with a complete entry ({} when absent)"""
        marker = self._entry(stage, key) / COMPLETE_MARKER
        if not self.enabled or not marker.is_file():
            return {}
        try:
            return json.loads(marker.read_text(encoding='utf-8'))
        except json.JSONDecodeError:
            return {}

    def save(self, stage: str, key: str, matrices: Dict[str, np.ndarray], meta: dict = None):
        if not self.enabled:
            return
        entry = self._entry(stage, key)
        for name, matrix in matrices.items():
            write_feature_file(entry / f'{name}.ssrf', matrix)
        atomic_write_json(entry / COMPLETE_MARKER, {'stage': stage, 'key': key, **(meta or {})})
        logger.debug(f"Cached {stage}/{key}: {sorted(matrices)}")

    def entries(self):
        """(stage, key, meta) for every complete entry"""
        if self.root is None or not self.root.is_dir():
            return []
        found = []
        for marker in sorted(self.root.glob(f'*/*/{COMPLETE_MARKER}')):
            try:
                meta = json.loads(marker.read_text(encoding='utf-8'))
            except json.JSONDecodeError:
                continue
            found.append((marker.parent.parent.name, marker.parent.name, meta))
        return found
