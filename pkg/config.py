import os

from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _env_int(name, default):
    value = os.environ.get(name)
    return int(value) if value else default


class Config:
    """Base configuration"""

    # Logging
    LOG_LEVEL = os.environ.get('CONFORMA_LOG') or 'WARNING'
    LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

    # Worker threads used to draw a batch of sample paths
    THREADS = _env_int('CONFORMA_THREADS', 1)

    # Sequential test defaults
    DEFAULT_K1 = 1
    DEFAULT_K2 = 1
    DEFAULT_MAX_SAMPLES = 100000
    DEFAULT_TOL = 1e-6

    # Simulation defaults (seconds)
    DEFAULT_HORIZON = 5.0
    DEFAULT_STEP = 0.01

    # Statistics
    MAX_DIMENSION = 3
    KS_FLOOR = 0.05
    DELTA_CHUNK_ELEMENTS = 2 ** 22

    # Monitor
    TIME_EPS = 1e-9
    MONOTONICITY_GRID = 20

    # Simulators
    BOUNCING_BALL_MAX_REDRAWS = 100

    # Reports
    REPORT_INDENT = 2


class DevelopmentConfig(Config):
    """Development configuration"""
    LOG_LEVEL = os.environ.get('CONFORMA_LOG') or 'INFO'


class ProductionConfig(Config):
    """Production configuration"""
    # Large batch runs: let the environment pick the worker count
    THREADS = _env_int('CONFORMA_THREADS', os.cpu_count() or 1)


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    DEFAULT_MAX_SAMPLES = 20000


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def get_config(env=None):
    """Return the configuration class for the given (or current) environment"""
    env = env or os.environ.get('CONFORMA_ENV', 'default')
    return config.get(env, config['default'])
