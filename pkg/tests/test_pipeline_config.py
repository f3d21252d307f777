import pytest

from app.errors import InvalidParameterError
from app.modules.pipeline.pipeline_config import (
    PRESETS,
    PipelineConfig,
    defaults_ini,
    dump_ini,
    load_config,
    parse_ini,
    preset_config,
)
from app.modules.pipeline.stages import words_per_scale
from app.modules.robustness.perturb import PerturbationKind
from app.modules.sparse.sparse_config import PoolingMode


def test_defaults():
    config = PipelineConfig()
    assert config.scales.divisors == [2, 4]
    assert config.dictionary.lambda_dl == 0.1
    assert config.coding.sparsity_fraction == 0.03
    assert config.pooling.mode == PoolingMode.ABSOLUTE
    assert config.perturb.divisors == [10, 8, 6, 4]
    assert config.perturb.kinds == [PerturbationKind.OCCLUSION, PerturbationKind.NOISE]


@pytest.mark.parametrize('preset, total', [('scene15', 2175), ('mit67', 3886), ('sun397', 6907), ('synthetic', 116)])
def test_word_presets(preset, total):
    assert preset_config(preset).dictionary.total_words() == total


def test_default_words_follow_region_counts():
    assert words_per_scale(PipelineConfig()) == [337, 1838]


def test_union_preset_halves_words():
    config = PipelineConfig().with_overrides({'dictionary': {'per_source': False}})
    assert config.dictionary.total_words() == 2175 // 2


def test_synthetic_preset_overrides():
    config = preset_config('synthetic')
    assert config.dictionary.epochs == 5
    assert config.classifier.C == 100.0
    assert set(PRESETS) == {'scene15', 'mit67', 'sun397', 'synthetic'}


def test_unknown_preset():
    with pytest.raises(InvalidParameterError):
        preset_config('caltech')


def test_parse_ini_overrides_and_lists():
    config = parse_ini(
        "[scales]\ndivisors = 2, 4, 8\n"
        "[dictionary]\npreset = none\nwords_per_scale = 10, 20, 30\n"
        "[classifier]\nC = 5  # stronger fit\n"
    )
    assert config.scales.divisors == [2, 4, 8]
    assert config.dictionary.preset is None
    assert words_per_scale(config) == [10, 20, 30]
    assert config.classifier.C == 5.0


@pytest.mark.parametrize('text', [
    "[coding]\nsparsity = 0.1\n",
    "[solver]\nC = 1\n",
    "[pca]\noutput_dim = zero\n",
    "[coding]\nsparsity_fraction = 1.5\n",
    "not an ini file",
])
def test_parse_ini_rejects(text):
    with pytest.raises(InvalidParameterError):
        parse_ini(text)


def test_words_per_scale_length_must_match_scales():
    config = PipelineConfig().with_overrides({'dictionary': {'words_per_scale': [4, 8, 16]}})
    with pytest.raises(InvalidParameterError):
        words_per_scale(config)


def test_dump_ini_round_trip():
    config = preset_config('mit67').with_overrides({'coding': {'sparsity_fraction': 0.05}})
    text = dump_ini(config)
    assert text.startswith(f'# fingerprint {config.fingerprint}')
    assert parse_ini(text) == config
    assert parse_ini(defaults_ini()).fingerprint == PipelineConfig().fingerprint


def test_runtime_settings_do_not_change_fingerprints():
    base = PipelineConfig()
    runtime = base.with_overrides({'pipeline': {'workers': 1, 'use_cache': False}})
    assert runtime.fingerprint == base.fingerprint
    assert runtime.stage_fingerprint('classifier') == base.stage_fingerprint('classifier')


def test_stage_fingerprints_track_their_sections():
    base = PipelineConfig()
    changed_c = base.with_overrides({'classifier': {'C': 2.0}})
    assert changed_c.stage_fingerprint('coding') == base.stage_fingerprint('coding')
    assert changed_c.stage_fingerprint('classifier') != base.stage_fingerprint('classifier')

    changed_perturb = base.with_overrides({'perturb': {'seeds': [9]}})
    assert changed_perturb.fingerprint != base.fingerprint
    assert changed_perturb.stage_fingerprint('classifier') == base.stage_fingerprint('classifier')

    with pytest.raises(InvalidParameterError):
        base.stage_fingerprint('perturb')


def test_load_config(tmp_path):
    path = tmp_path / 'run.ini'
    path.write_text("[pca]\noutput_dim = 64\n")
    config = load_config(path, preset='sun397')
    assert config.pca.output_dim == 64
    assert config.dictionary.preset == 'sun397'
    with pytest.raises(InvalidParameterError):
        load_config(tmp_path / 'missing.ini')
