"""
Command Line
click group behind `python run.py ...` and `flask scenes ...`
"""
import functools
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from app import configure_logging
from app.config import get_config
from app.errors import SceneCodingError, UsageError
from app.modules.pipeline.artifacts import inspect_artifacts
from app.modules.pipeline.manifest import import_dataset, import_feature_labels, load_manifest
from app.modules.pipeline.pipeline_config import defaults_ini, load_config
from app.modules.pipeline.reports import format_report_table, write_report_jsonl
from app.modules.pipeline.runner import run_ablation, run_eval, run_train
from app.modules.pipeline.synthetic import VARIANTS, generate_synthetic
from app.modules.robustness.perturb import parse_perturb_flag

logger = logging.getLogger(__name__)


def handle_errors(fn):
    """Report package errors as one line and exit with their code"""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SceneCodingError as e:
            logger.error(f"{fn.__name__} failed: {e}")
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)
    return wrapper


def _settings():
    return get_config()


def _pipeline_config(config_path, preset, workers, no_cache):
    # environment < INI [pipeline] < command-line flags
    settings = _settings()
    config = load_config(config_path, preset, runtime={'workers': settings.WORKERS, 'use_cache': settings.USE_CACHE})
    runtime = {}
    if workers:
        runtime['workers'] = workers
    if no_cache:
        runtime['use_cache'] = False
    return config.with_overrides({'pipeline': runtime}) if runtime else config


def _report_path(kind: str, fingerprint: str, report) -> Path:
    if report:
        return Path(report)
    stamp = datetime.now(timezone.utc).strftime('%Y%m%dT%H%M%S')
    return _settings().REPORT_DIR / f'{kind}_{fingerprint}_{stamp}.jsonl'


# Options shared by the pipeline commands
def pipeline_options(fn):
    fn = click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='INI configuration file')(fn)
    fn = click.option('--preset', type=click.Choice(['scene15', 'mit67', 'sun397', 'synthetic']))(fn)
    fn = click.option('--data', 'data_dir', required=True, type=click.Path(file_okay=False),
                      help='Directory holding manifest.tsv and split.tsv')(fn)
    fn = click.option('--artifacts', 'artifact_dir', type=click.Path(file_okay=False),
                      help='Artifact directory (default SCENES_ARTIFACT_DIR)')(fn)
    fn = click.option('--cache', 'cache_dir', type=click.Path(file_okay=False),
                      help='Stage cache directory (default SCENES_CACHE_DIR)')(fn)
    fn = click.option('--no-cache', is_flag=True, help='Recompute every stage')(fn)
    fn = click.option('--workers', type=click.IntRange(min=1), help='Worker threads over images')(fn)
    return fn


def _dirs(artifact_dir, cache_dir):
    settings = _settings()
    return Path(artifact_dir or settings.ARTIFACT_DIR), Path(cache_dir or settings.CACHE_DIR)


def _emit(kind: str, config, report, report_path):
    path = _report_path(kind, config.fingerprint, report_path)
    write_report_jsonl(report, path)
    click.echo(format_report_table(report), nl=False)
    click.echo(f"report: {path}")


@click.group()
@click.option('-v', '--verbose', is_flag=True, help='Log to the console as well')
def cli(verbose):
    """Multi-scale sparse coding for scene recognition"""
    configure_logging(level='DEBUG' if verbose else None, console=verbose)


# ============================================
# Datasets
# ============================================

@cli.command('import')
@click.argument('root', required=False, type=click.Path(file_okay=False))
@click.option('--labels', type=click.Path(dir_okay=False), help='Row labels of ingested feature files')
@click.option('--out', type=click.Path(file_okay=False), help='Manifest directory (default ROOT)')
@click.option('--test-fraction', default=0.3, show_default=True, type=click.FloatRange(0.0, 1.0, max_open=True))
@click.option('--seed', default=0, show_default=True, type=int)
@handle_errors
def import_command(root, labels, out, test_fraction, seed):
    """Build manifest.tsv/split.tsv from a directory-per-class dataset or a row label file"""
    if bool(root) == bool(labels):
        raise UsageError('Give either a dataset ROOT or --labels')
    if labels:
        if not out:
            raise UsageError('--labels needs --out')
        manifest = import_feature_labels(labels, out, test_fraction, seed)
    else:
        manifest = import_dataset(root, out, test_fraction, seed)
    train, test = len(manifest.split('train')), len(manifest.split('test'))
    click.echo(f"{len(manifest.classes)} classes, {train} train / {test} test samples")


@cli.command('synth')
@click.argument('out', type=click.Path(file_okay=False))
@click.option('--classes', default=4, show_default=True, type=int)
@click.option('--size', default=64, show_default=True, type=int)
@click.option('--train', 'n_train', default=50, show_default=True, type=int)
@click.option('--test', 'n_test', default=20, show_default=True, type=int)
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--variant', default='objects', show_default=True, type=click.Choice(VARIANTS))
@handle_errors
def synth_command(out, classes, size, n_train, n_test, seed, variant):
    """Generate the synthetic scene benchmark"""
    manifest = generate_synthetic(out, classes, size, n_train, n_test, seed, variant)
    click.echo(f"{len(manifest.samples)} images in {out}")


# ============================================
# Pipeline
# ============================================

@cli.command('train')
@pipeline_options
@handle_errors
def train_command(config_path, preset, data_dir, artifact_dir, cache_dir, no_cache, workers):
    """Fit PCA, dictionaries and classifiers on the train split"""
    config = _pipeline_config(config_path, preset, workers, no_cache)
    artifact_dir, cache_dir = _dirs(artifact_dir, cache_dir)
    artifacts = run_train(config, load_manifest(data_dir), artifact_dir, cache_dir)
    click.echo(f"trained {sorted(artifacts.models)} -> {artifact_dir} (fingerprint {artifacts.fingerprint})")


@cli.command('eval')
@pipeline_options
@click.option('--perturb', 'perturb_flags', multiple=True, metavar='kind=K,n=N[,count=C,seed=S]',
              help='Evaluate under a perturbation; repeatable')
@click.option('--ablation', is_flag=True, help='Also report the local-only model')
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), help='JSON-lines report path')
@handle_errors
def eval_command(config_path, preset, data_dir, artifact_dir, cache_dir, no_cache, workers,
                 perturb_flags, ablation, report_path):
    """Accuracy of the trained models on the test split"""
    config = _pipeline_config(config_path, preset, workers, no_cache)
    specs = [parse_perturb_flag(flag) for flag in perturb_flags]
    artifact_dir, cache_dir = _dirs(artifact_dir, cache_dir)
    report = run_eval(config, load_manifest(data_dir), artifact_dir, specs, ablation, cache_dir)
    _emit('eval', config, report, report_path)


@cli.command('ablate')
@pipeline_options
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), help='JSON-lines report path')
@handle_errors
def ablate_command(config_path, preset, data_dir, artifact_dir, cache_dir, no_cache, workers, report_path):
    """Global-only, local-only and combined accuracies"""
    config = _pipeline_config(config_path, preset, workers, no_cache)
    artifact_dir, cache_dir = _dirs(artifact_dir, cache_dir)
    report = run_ablation(config, load_manifest(data_dir), artifact_dir, cache_dir)
    _emit('ablate', config, report, report_path)


@cli.command('perturb-eval')
@pipeline_options
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), help='JSON-lines report path')
@handle_errors
def perturb_eval_command(config_path, preset, data_dir, artifact_dir, cache_dir, no_cache, workers, report_path):
    """Robustness grid from the [perturb] section: every kind, divisor and seed"""
    config = _pipeline_config(config_path, preset, workers, no_cache)
    artifact_dir, cache_dir = _dirs(artifact_dir, cache_dir)
    report = run_eval(config, load_manifest(data_dir), artifact_dir, config.perturb.grid(), False, cache_dir)
    _emit('perturb', config, report, report_path)


# ============================================
# Inspection
# ============================================

@cli.command('inspect')
@click.option('--defaults', is_flag=True, help='Print every default in INI form')
@click.option('--artifacts', 'artifact_dir', type=click.Path(file_okay=False))
@handle_errors
def inspect_command(defaults, artifact_dir):
    """Default configuration or the metadata of trained artifacts"""
    if defaults:
        click.echo(defaults_ini(), nl=False)
        return
    info = inspect_artifacts(artifact_dir or _settings().ARTIFACT_DIR)
    click.echo(json.dumps(info, indent=2))


@cli.command('serve')
@click.option('--host', default='127.0.0.1', show_default=True)
@click.option('--port', default=5000, show_default=True, type=int)
def serve_command(host, port):
    """Read-only inspection API"""
    from app import create_app
    create_app().run(host=host, port=port, debug=False)


def main(argv=None):
    """Entry point mapping click usage errors to exit code 1"""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    except click.Abort:
        click.echo('Aborted!', err=True)
        sys.exit(1)
    sys.exit(0)
