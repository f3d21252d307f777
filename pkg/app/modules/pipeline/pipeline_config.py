"""
Pipeline Configuration
INI sections per module parsed into validated models, presets and config fingerprints
"""
import configparser
import hashlib
import json
import logging
import typing
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.errors import InvalidParameterError
from app.models import SourceTag
from app.modules.classification.svm import SvmConfig
from app.modules.features.extractor import DEFAULT_EXTRACTORS, ExtractorConfig
from app.modules.geometry.patch_grid import ScaleConfig
from app.modules.robustness.perturb import DEFAULT_DIVISORS, PerturbationKind, perturbation_grid
from app.modules.sparse.dictionary import WORD_PRESETS
from app.modules.sparse.sparse_config import CodingConfig, DictLearnConfig, KmeansConfig, PoolingMode

logger = logging.getLogger(__name__)

FINGERPRINT_CHARS = 16


class FeatureMode(str, Enum):
    BUILTIN = 'builtin'
    EXTERNAL = 'external'


# ============================================
# Sections
# ============================================

class FeaturesSection(BaseModel):
    """Builtin extractor layout per source, or precomputed SSRF/CSV feature files"""
    model_config = ConfigDict(frozen=True)

    mode: FeatureMode = FeatureMode.BUILTIN
    structure_grid: int = Field(DEFAULT_EXTRACTORS[SourceTag.STRUCTURE].grid, ge=1)
    structure_orientation_bins: int = Field(DEFAULT_EXTRACTORS[SourceTag.STRUCTURE].orientation_bins, ge=1)
    structure_intensity_bins: int = Field(DEFAULT_EXTRACTORS[SourceTag.STRUCTURE].intensity_bins, ge=1)
    object_grid: int = Field(DEFAULT_EXTRACTORS[SourceTag.OBJECT].grid, ge=1)
    object_orientation_bins: int = Field(DEFAULT_EXTRACTORS[SourceTag.OBJECT].orientation_bins, ge=1)
    object_intensity_bins: int = Field(DEFAULT_EXTRACTORS[SourceTag.OBJECT].intensity_bins, ge=1)
    gradient_weight: float = Field(1.0, ge=0.0)
    intensity_weight: float = Field(0.5, ge=0.0)
    # external mode: one row per image (global) or per patch in canonical order (local)
    global_file: Optional[str] = None
    structure_file: Optional[str] = None
    object_file: Optional[str] = None
    image_width: int = Field(64, ge=8)
    image_height: int = Field(64, ge=8)

    def extractor(self, tag: SourceTag) -> ExtractorConfig:
        tag = SourceTag(tag)
        prefix = 'object' if tag == SourceTag.OBJECT else 'structure'
        return ExtractorConfig(
            grid=getattr(self, f'{prefix}_grid'),
            orientation_bins=getattr(self, f'{prefix}_orientation_bins'),
            intensity_bins=getattr(self, f'{prefix}_intensity_bins'),
            gradient_weight=self.gradient_weight,
            intensity_weight=self.intensity_weight,
        )

    def external_file(self, tag: SourceTag) -> Optional[str]:
        return getattr(self, f'{SourceTag(tag).value}_file')


class PcaSection(BaseModel):
    model_config = ConfigDict(frozen=True)

    output_dim: int = Field(1000, ge=1)


class DictionarySection(BaseModel):
    """Words per source dictionary from a preset or explicit per-scale counts"""
    model_config = ConfigDict(frozen=True)

    preset: Optional[str] = 'scene15'
    words_per_scale: Optional[List[int]] = None
    per_source: bool = True
    lambda_dl: float = Field(0.1, ge=0.0)
    epochs: int = Field(10, ge=1)
    kmeans_iters: int = Field(100, ge=1)
    inner_sweeps: int = Field(50, ge=1)
    replace_dead_atoms: bool = True
    seed: int = 0

    @field_validator('preset')
    @classmethod
    def _check_preset(cls, value):
        if value is not None and value not in WORD_PRESETS:
            raise ValueError(f'unknown preset {value!r}; choose from {sorted(WORD_PRESETS)}')
        return value

    @model_validator(mode='after')
    def _check_words(self):
        if self.preset is None and not self.words_per_scale:
            raise ValueError('set either preset or words_per_scale')
        if self.words_per_scale is not None and any(k < 1 for k in self.words_per_scale):
            raise ValueError('words_per_scale entries must be >= 1')
        return self

    def learn_config(self) -> DictLearnConfig:
        return DictLearnConfig(
            lambda_dl=self.lambda_dl,
            epochs=self.epochs,
            seed=self.seed,
            inner_sweeps=self.inner_sweeps,
            replace_dead_atoms=self.replace_dead_atoms,
        )

    def kmeans_config(self) -> KmeansConfig:
        return KmeansConfig(k=1, max_iters=self.kmeans_iters, seed=self.seed)

    def total_words(self) -> Optional[int]:
        """Columns of one source dictionary from the preset (None with explicit counts)"""
        if self.words_per_scale:
            return None
        total = WORD_PRESETS[self.preset]
        # preset counts the union of both source dictionaries
        return total if self.per_source else total // 2


class PoolingSection(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: PoolingMode = PoolingMode.ABSOLUTE


class PerturbSection(BaseModel):
    model_config = ConfigDict(frozen=True)

    divisors: List[int] = Field(default_factory=lambda: list(DEFAULT_DIVISORS))
    kinds: List[PerturbationKind] = Field(
        default_factory=lambda: [PerturbationKind.OCCLUSION, PerturbationKind.NOISE]
    )
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    count: int = Field(1, ge=1)

    def grid(self):
        return perturbation_grid(self.divisors, self.kinds, self.seeds, self.count)


class RuntimeSection(BaseModel):
    """Execution settings that never change results"""
    model_config = ConfigDict(frozen=True)

    workers: int = Field(4, ge=1)
    use_cache: bool = True


class PipelineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    scales: ScaleConfig = Field(default_factory=ScaleConfig)
    features: FeaturesSection = Field(default_factory=FeaturesSection)
    pca: PcaSection = Field(default_factory=PcaSection)
    dictionary: DictionarySection = Field(default_factory=DictionarySection)
    coding: CodingConfig = Field(default_factory=CodingConfig)
    pooling: PoolingSection = Field(default_factory=PoolingSection)
    classifier: SvmConfig = Field(default_factory=SvmConfig)
    perturb: PerturbSection = Field(default_factory=PerturbSection)
    pipeline: RuntimeSection = Field(default_factory=RuntimeSection)

    # ============================================
    # Fingerprints
    # ============================================

    def _digest(self, sections) -> str:
        data = self.model_dump(mode='json', include=set(sections))
        canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:FINGERPRINT_CHARS]

    @property
    def fingerprint(self) -> str:
        """Hash of every result-affecting section"""
        return self._digest(RESULT_SECTIONS)

    def stage_fingerprint(self, stage: str) -> str:
        """Hash of the sections a stage depends on"""
        if stage not in STAGE_SECTIONS:
            raise InvalidParameterError(f"Unknown stage {stage!r}")
        return self._digest(STAGE_SECTIONS[stage])

    def with_overrides(self, overrides: Dict[str, Dict]) -> 'PipelineConfig':
        data = self.model_dump(mode='json')
        for section, values in overrides.items():
            data.setdefault(section, {}).update(values)
        return _validate(data)


RESULT_SECTIONS = (
    'scales', 'features', 'pca', 'dictionary', 'coding', 'pooling', 'classifier', 'perturb',
)

STAGE_SECTIONS = {
    'features': ('scales', 'features'),
    'pca': ('scales', 'features', 'pca'),
    'dictionary': ('scales', 'features', 'pca', 'dictionary'),
    'coding': ('scales', 'features', 'pca', 'dictionary', 'coding', 'pooling'),
    'classifier': ('scales', 'features', 'pca', 'dictionary', 'coding', 'pooling', 'classifier'),
}

# Overrides applied on top of the defaults
PRESETS: Dict[str, Dict[str, Dict]] = {
    'scene15': {'dictionary': {'preset': 'scene15'}},
    'mit67': {'dictionary': {'preset': 'mit67'}},
    'sun397': {'dictionary': {'preset': 'sun397'}},
    'synthetic': {
        'dictionary': {'preset': 'synthetic', 'epochs': 5},
        'classifier': {'C': 100.0},
    },
}


def _validate(data) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = '.'.join(str(p) for p in first['loc'])
        raise InvalidParameterError(f"Invalid configuration at {where}: {first['msg']}") from e


def preset_config(name: str) -> PipelineConfig:
    if name not in PRESETS:
        raise InvalidParameterError(f"Unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PipelineConfig().with_overrides(PRESETS[name])


# ============================================
# INI
# ============================================

def _is_list(annotation) -> bool:
    if typing.get_origin(annotation) in (list, List):
        return True
    return any(_is_list(arg) for arg in typing.get_args(annotation))


def _is_optional(annotation) -> bool:
    return type(None) in typing.get_args(annotation)


def _coerce(section_model, key: str, raw: str):
    annotation = section_model.model_fields[key].annotation
    raw = raw.strip()
    if _is_optional(annotation) and raw.lower() in ('', 'none'):
        return None
    if _is_list(annotation):
        return [item.strip() for item in raw.split(',') if item.strip()]
    return raw


def parse_ini(text: str, base: PipelineConfig = None) -> PipelineConfig:
    """`key = value` sections on top of `base` (defaults); unknown sections or keys are rejected"""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=('#', ';'))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise InvalidParameterError(f"Cannot parse configuration: {e}") from e

    fields = PipelineConfig.model_fields
    overrides: Dict[str, Dict] = {}
    for section in parser.sections():
        if section not in fields:
            raise InvalidParameterError(f"Unknown configuration section [{section}]")
        section_model = fields[section].annotation
        for key, raw in parser.items(section):
            if key not in section_model.model_fields:
                raise InvalidParameterError(f"Unknown key {key!r} in [{section}]")
            overrides.setdefault(section, {})[key] = _coerce(section_model, key, raw)
    return (base or PipelineConfig()).with_overrides(overrides)


def load_config(path=None, preset: str = None, runtime: Dict = None) -> PipelineConfig:
    """Preset (or defaults), then `runtime` [pipeline] values, then an INI file"""
    base = preset_config(preset) if preset else PipelineConfig()
    if runtime:
        base = base.with_overrides({'pipeline': runtime})
    if path is None:
        return base
    path = Path(path)
    if not path.is_file():
        raise InvalidParameterError(f"Configuration file not found: {path}")
    config = parse_ini(path.read_text(encoding='utf-8'), base)
    logger.info(f"Loaded configuration {path} (fingerprint {config.fingerprint})")
    return config


def _format_value(value) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, list):
        return ', '.join(_format_value(v) for v in value)
    return str(value)


def dump_ini(config: PipelineConfig) -> str:
    """INI text that parse_ini reads back to the same configuration"""
    data = config.model_dump(mode='json')
    lines = [f'# fingerprint {config.fingerprint}']
    for section, values in data.items():
        lines.append('')
        lines.append(f'[{section}]')
        if section == 'dictionary':
            presets = ' '.join(f'{k}={v}' for k, v in WORD_PRESETS.items())
            lines.append(f'# word presets per source: {presets}')
        for key, value in values.items():
            lines.append(f'{key} = {_format_value(value)}'.rstrip())
    return '\n'.join(lines) + '\n'


def defaults_ini() -> str:
    return dump_ini(PipelineConfig())
