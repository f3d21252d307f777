import pytest
from click.testing import CliRunner

from app.cli import cli
from app.modules.pipeline.pipeline_config import PipelineConfig


@pytest.fixture
def runner():
    return CliRunner()


def test_inspect_defaults(runner):
    result = runner.invoke(cli, ['inspect', '--defaults'])
    assert result.exit_code == 0
    assert result.output.startswith(f'# fingerprint {PipelineConfig().fingerprint}')
    assert 'lambda_dl = 0.1' in result.output
    assert 'sparsity_fraction = 0.03' in result.output


def test_synth_then_import(runner, tmp_path):
    out = tmp_path / 'scenes'
    result = runner.invoke(cli, ['synth', str(out), '--classes', '2', '--size', '32', '--train', '3', '--test', '1'])
    assert result.exit_code == 0, result.output
    assert '8 images' in result.output
    assert (out / 'manifest.tsv').is_file()

    result = runner.invoke(cli, ['import', str(out), '--out', str(tmp_path / 'manifest'), '--test-fraction', '0.25'])
    assert result.exit_code == 0, result.output
    assert '2 classes, 6 train / 2 test samples' in result.output


def test_import_needs_one_source(runner, tmp_path):
    result = runner.invoke(cli, ['import'])
    assert result.exit_code == 1
    assert 'error:' in result.output

    labels = tmp_path / 'labels.txt'
    labels.write_text('a\nb\n')
    assert runner.invoke(cli, ['import', '--labels', str(labels)]).exit_code == 1


def test_eval_without_artifacts(runner, synthetic_dataset, tmp_path):
    out, _ = synthetic_dataset
    result = runner.invoke(cli, [
        'eval', '--data', str(out), '--artifacts', str(tmp_path / 'missing'), '--no-cache',
    ])
    assert result.exit_code == 2
    assert 'train first' in result.output


def test_bad_perturb_flag(runner, synthetic_dataset, tmp_path):
    out, _ = synthetic_dataset
    result = runner.invoke(cli, [
        'eval', '--data', str(out), '--artifacts', str(tmp_path / 'missing'), '--perturb', 'kind=blur,n=4',
    ])
    assert result.exit_code == 1


def test_missing_config_file(runner, synthetic_dataset, tmp_path):
    out, _ = synthetic_dataset
    result = runner.invoke(cli, ['train', '--data', str(out), '--config', str(tmp_path / 'nope.ini')])
    assert result.exit_code == 1


def test_train_and_eval(runner, synthetic_dataset, tiny_config, tmp_path):
    from app.modules.pipeline.pipeline_config import dump_ini

    out, _ = synthetic_dataset
    config = tmp_path / 'tiny.ini'
    config.write_text(dump_ini(tiny_config))
    artifacts = tmp_path / 'artifacts'
    common = ['--data', str(out), '--config', str(config), '--artifacts', str(artifacts), '--no-cache']

    result = runner.invoke(cli, ['train', *common])
    assert result.exit_code == 0, result.output
    assert 'trained' in result.output

    report = tmp_path / 'report.jsonl'
    result = runner.invoke(cli, ['eval', *common, '--perturb', 'kind=occlusion,n=4,seed=1', '--report', str(report)])
    assert result.exit_code == 0, result.output
    assert 'overall accuracy' in result.output
    assert report.is_file()

    result = runner.invoke(cli, ['inspect', '--artifacts', str(artifacts)])
    assert result.exit_code == 0
    assert '"fingerprint"' in result.output
