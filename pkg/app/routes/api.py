"""
API Routes Blueprint
Read-only JSON endpoints over defaults, trained artifacts and reports
"""
import logging
import math

from flask import Blueprint, current_app, jsonify

from app.errors import ArtifactError, SceneCodingError
from app.modules.pipeline.artifacts import inspect_artifacts
from app.modules.pipeline.pipeline_config import PipelineConfig, defaults_ini
from app.modules.pipeline.reports import latest_report, read_report_jsonl

logger = logging.getLogger(__name__)

api_bp = Blueprint('api', __name__)


def _finite(value):
    """NaN is not valid JSON; report it as null"""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_finite(v) for v in value]
    return value


@api_bp.route('/defaults')
def get_defaults():
    """Default pipeline configuration as JSON and INI text"""
    config = PipelineConfig()
    return jsonify({
        'success': True,
        'fingerprint': config.fingerprint,
        'config': config.model_dump(mode='json'),
        'ini': defaults_ini(),
    })


@api_bp.route('/artifacts')
def get_artifacts():
    """Metadata of the trained artifact directory"""
    try:
        info = inspect_artifacts(current_app.config['ARTIFACT_DIR'])
    except ArtifactError as e:
        return jsonify({'success': False, 'message': str(e)}), 404
    except SceneCodingError as e:
        logger.error(f"Artifact inspection failed: {e}")
        return jsonify({'success': False, 'message': str(e)}), 500
    return jsonify({'success': True, **_finite(info)})


@api_bp.route('/reports/latest')
def get_latest_report():
    """Most recent evaluation report in the report directory"""
    path = latest_report(current_app.config['REPORT_DIR'])
    if path is None:
        return jsonify({'success': False, 'message': 'No reports yet; run eval first'}), 404
    try:
        report = read_report_jsonl(path)
    except SceneCodingError as e:
        logger.error(f"Unreadable report {path}: {e}")
        return jsonify({'success': False, 'message': str(e)}), 500
    return jsonify({'success': True, 'path': path.name, 'records': _finite(report.to_records())})
