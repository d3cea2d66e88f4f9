import logging
import secrets
import sys

import numpy as np

from config import get_config

activity_logger = logging.getLogger('conforma.activity')


class ConformaError(Exception):
    """Base class for every error the toolkit raises on purpose"""


def configure_logging(level=None):
    """Install a single stderr handler on the root logger"""
    cfg = get_config()
    level = (level or cfg.LOG_LEVEL).upper()
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(cfg.LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(getattr(logging, level, logging.WARNING))


def log_activity(action, details=None, level=logging.INFO):
    """Log system activity"""
    try:
        if details:
            activity_logger.log(level, 'action=%s details=%s', action, details)
        else:
            activity_logger.log(level, 'action=%s', action)
    except Exception:
        # Don't fail if logging fails
        pass


def entropy_seed():
    """Draw a fresh 63-bit master seed from OS entropy"""
    return secrets.randbits(63)


def path_rng(key):
    """Counter-based generator for one stream, keyed by an integer tuple.

    The key is typically ``(master_seed, stream, index)``; the same key always
    yields the same variates, whatever thread or order it is drawn in.
    """
    if isinstance(key, (int, np.integer)):
        key = (int(key),)
    entropy = [int(k) for k in key]
    if any(k < 0 for k in entropy):
        raise ConformaError(f'seed components must be non-negative, got {key!r}')
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def format_sci(value):
    """Format a count or duration the way result tables show it (3.9e+01)"""
    return f"{value:.1e}"


def format_stat(value):
    """Format a statistic or probability with two decimals"""
    return f"{value:.2f}"
