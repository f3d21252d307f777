import numpy as np
import pytest

from app.errors import ArtifactError
from app.modules.pipeline.cache import COMPLETE_MARKER, StageCache, cache_key
from app.modules.pipeline.reports import (
    EvalReport,
    RobustnessRow,
    format_report_table,
    latest_report,
    read_report_jsonl,
    robustness_frame,
    write_report_jsonl,
)


def _report(**overrides):
    fields = dict(
        overall=0.75,
        per_class={'kitchen': 1.0, 'forest': 0.5},
        fingerprint='0123456789abcdef',
        n_test=4,
        global_overall=0.5,
        rows=[
            RobustnessRow(kind='occlusion', n=10, accuracy=0.75, global_accuracy=0.5, seeds=5),
            RobustnessRow(kind='occlusion', n=4, accuracy=0.5, global_accuracy=0.25, seeds=5),
        ],
        relative={'kitchen': 0.5, 'forest': 0.0},
        confusion=[[2, 0], [1, 1]],
    )
    fields.update(overrides)
    return EvalReport(**fields)


# ============================================
# Stage cache
# ============================================

def test_cache_key_is_stable():
    assert cache_key('a', ['x', 'y']) == cache_key('a', ('x', 'y'))
    assert len(cache_key('a')) == 16
    assert cache_key('ab', 'c') != cache_key('a', 'bc')


def test_stage_cache_round_trip(tmp_path, rng):
    cache = StageCache(tmp_path)
    values = rng.standard_normal((3, 5)).astype(np.float32)
    assert cache.load('coding', 'k1', ['values']) is None
    cache.save('coding', 'k1', {'values': values}, meta={'samples': 3})
    loaded = cache.load('coding', 'k1', ['values'])
    assert np.array_equal(loaded['values'], values)
    assert cache.load_meta('coding', 'k1')['samples'] == 3
    assert [(stage, key) for stage, key, _ in cache.entries()] == [('coding', 'k1')]


def test_incomplete_entries_are_ignored(tmp_path, rng):
    cache = StageCache(tmp_path)
    cache.save('extract', 'k', {'values': rng.random((2, 2))})
    (tmp_path / 'extract' / 'k' / COMPLETE_MARKER).unlink()
    assert cache.load('extract', 'k', ['values']) is None
    assert cache.load_meta('extract', 'k') == {}


def test_corrupt_entries_are_discarded(tmp_path, rng):
    cache = StageCache(tmp_path)
    cache.save('extract', 'k', {'values': rng.random((2, 2))})
    (tmp_path / 'extract' / 'k' / 'values.ssrf').write_bytes(b'garbage')
    assert cache.load('extract', 'k', ['values']) is None
    assert not (tmp_path / 'extract' / 'k').exists()


def test_disabled_cache(tmp_path, rng):
    for cache in (StageCache(tmp_path, enabled=False), StageCache(None)):
        cache.save('extract', 'k', {'values': rng.random((2, 2))})
        assert cache.load('extract', 'k', ['values']) is None
    assert not (tmp_path / 'extract').exists()


# ============================================
# Reports
# ============================================

def test_report_jsonl_round_trip(tmp_path):
    report = _report(ablation={'global': 0.5, 'local': 0.6, 'combined': 0.75})
    path = tmp_path / 'eval.jsonl'
    write_report_jsonl(report, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert read_report_jsonl(path) == report


def test_read_report_errors(tmp_path):
    with pytest.raises(ArtifactError):
        read_report_jsonl(tmp_path / 'missing.jsonl')
    bad = tmp_path / 'bad.jsonl'
    bad.write_text('{"type": "robustness"}\n')
    with pytest.raises(ArtifactError):
        read_report_jsonl(bad)


def test_latest_report(tmp_path):
    assert latest_report(tmp_path / 'none') is None
    write_report_jsonl(_report(), tmp_path / 'a.jsonl')
    write_report_jsonl(_report(), tmp_path / 'b.jsonl')
    assert latest_report(tmp_path).name in ('a.jsonl', 'b.jsonl')
    assert latest_report(tmp_path).suffix == '.jsonl'


def test_robustness_frame_drops():
    frame = robustness_frame(_report())
    assert frame['drop'].tolist() == pytest.approx([0.0, 0.25])
    assert frame['global_drop'].tolist() == pytest.approx([0.0, 0.25])


def test_format_report_table():
    text = format_report_table(_report(ablation={'global': 0.5, 'local': 0.6, 'combined': 0.75}))
    assert 'overall accuracy 0.7500' in text
    assert 'global-only 0.5000' in text
    assert 'W/10' in text and 'W/4' in text
    assert text.index('W/10') < text.index('W/4')
    assert 'kitchen' in text


def test_comparable_ignores_timestamp():
    first, second = _report(created_at='2024-01-01T00:00:00+00:00'), _report()
    assert first.comparable() == second.comparable()
