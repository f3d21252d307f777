"""
Scene Sparse Coding - Application Factory
Logging setup and the Flask application used by the inspection API
"""
import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path

from dotenv import load_dotenv
from flask import Flask

# Load environment variables
load_dotenv()

__version__ = '1.0.0'

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s'


def configure_logging(log_dir=None, level=None, console=False):
    """Configure logging to a rotating file and, for CLI runs, the console"""
    from app.config import get_config

    cfg = get_config()
    log_dir = Path(log_dir or cfg.LOG_DIR)
    level = getattr(logging, str(level or cfg.LOG_LEVEL).upper(), logging.INFO)

    # Create logs directory if not exists
    log_dir.mkdir(parents=True, exist_ok=True)

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Check if a FileHandler already exists to prevent duplication on reloads
    if not any(isinstance(h, RotatingFileHandler) for h in root_logger.handlers):
        file_handler = RotatingFileHandler(
            log_dir / 'scenecoding.log', maxBytes=5 * 1024 * 1024, backupCount=5, encoding='utf-8'
        )
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        file_handler.setLevel(level)
        root_logger.addHandler(file_handler)

    if console and not any(type(h) is logging.StreamHandler for h in root_logger.handlers):
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        console_handler.setLevel(level)
        root_logger.addHandler(console_handler)

    # Silence werkzeug access logs
    logging.getLogger('werkzeug').setLevel(logging.WARNING)


def create_app(config_name=None):
    """
    Application factory pattern
    Creates the Flask application serving read-only artifact inspection
    """
    app = Flask(__name__)

    from app.config import get_config
    config_cls = get_config(config_name or os.getenv('SCENES_ENV'))
    app.config.from_object(config_cls)
    config_cls.init_app(app)

    configure_logging(app.config['LOG_DIR'], app.config['LOG_LEVEL'])
    app.logger.propagate = True
    for h in app.logger.handlers[:]:
        app.logger.removeHandler(h)

    # Register blueprints
    from app.routes.api import api_bp
    app.register_blueprint(api_bp, url_prefix='/api')

    # Expose the pipeline commands under `flask scenes ...` as well
    from app.cli import cli
    app.cli.add_command(cli, name='scenes')

    app.logger.info('Scene coding inspection API startup')
    return app
