"""
Application Configuration
Manages environment-driven settings for the CLI and the inspection API
"""
import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Base directory
BASE_DIR = Path(__file__).parent.parent


class Config:
    """Base configuration"""
    SECRET_KEY = os.getenv('SECRET_KEY', 'dev-secret-key-change-in-production')

    # Paths
    DATA_DIR = Path(os.getenv('SCENES_DATA_DIR', BASE_DIR / 'data'))
    ARTIFACT_DIR = Path(os.getenv('SCENES_ARTIFACT_DIR', DATA_DIR / 'artifacts'))
    CACHE_DIR = Path(os.getenv('SCENES_CACHE_DIR', DATA_DIR / 'cache'))
    REPORT_DIR = Path(os.getenv('SCENES_REPORT_DIR', DATA_DIR / 'reports'))
    LOG_DIR = Path(os.getenv('SCENES_LOG_DIR', BASE_DIR / 'logs'))

    # Runtime
    WORKERS = int(os.getenv('SCENES_WORKERS', 4))
    LOG_LEVEL = os.getenv('SCENES_LOG_LEVEL', 'INFO')
    USE_CACHE = os.getenv('SCENES_USE_CACHE', 'True') == 'True'

    @classmethod
    def init_app(cls, app=None):
        """Create the working directories"""
        for path in (cls.DATA_DIR, cls.ARTIFACT_DIR, cls.CACHE_DIR, cls.REPORT_DIR):
            path.mkdir(parents=True, exist_ok=True)


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True
    TESTING = False


class TestingConfig(Config):
    """Testing configuration"""
    DEBUG = False
    TESTING = True
    WORKERS = 1
    USE_CACHE = False


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False
    TESTING = False


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
    'default': DevelopmentConfig
}


def get_config(config_name=None):
    """Resolve a configuration class by name or from SCENES_ENV"""
    config_name = config_name or os.getenv('SCENES_ENV', 'default')
    return config.get(config_name, DevelopmentConfig)
