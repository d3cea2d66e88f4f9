import os
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))
os.environ.setdefault('CONFORMA_ENV', 'testing')

from traces import Trace  # noqa: E402

CONFIGS = ROOT / 'configs'


def make_trace(step=0.01, end=2.0, id=None, **signals):
    """Trace sampled every ``step`` on [0, end]; signals are callables of time"""
    times = np.arange(int(round(end / step)) + 1) * step
    names = tuple(signals)
    values = np.column_stack([np.asarray(signals[name](times), dtype=float) * np.ones_like(times)
                              for name in names])
    return Trace(names, times, values, id=id)


@pytest.fixture
def ramp():
    """x(t) = t on [0, 2]"""
    return make_trace(x=lambda t: t)


@pytest.fixture
def write_csv(tmp_path):
    def write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return path
    return write
