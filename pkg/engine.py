"""Sequential two-sample test and the conformance verification loop.

Both loops draw ``k1`` samples from one side and ``k2`` from the other per
iteration, recompute the statistic and its confidence, and stop once the
confidence reaches ``alpha_d``. Sample ``i`` of side ``j`` is always drawn with
the key ``(master_seed, j, i)``, so results do not depend on the number of
worker threads.
"""
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from config import get_config
from stats import (Assertion, SampleSet, StatsError, assert_hypothesis, confidence_level,
                   delta_multi, delta_scalar, max_confidence)
from stl import (MonotonicityError, Monotonicity, SeparabilityError, critical_parameter,
                 formula_to_text)
from systems import NO_INPUT, TracePoolExhausted, sample_path
from utils import ConformaError, entropy_seed, log_activity, path_rng

logger = logging.getLogger(__name__)

SIDES = {1: 'X', 2: 'Y'}


class TestConfigError(ConformaError):
    """A TestConfig violates its invariants"""


class SamplerError(ConformaError):
    def __init__(self, message, side=None, index=None):
        super().__init__(message)
        self.side = side
        self.index = index


class SamplesExhausted(ConformaError):
    """A finite sample source has no more values"""


@dataclass
class TestConfig:
    __test__ = False

    c: float
    alpha_d: float
    k1: int = None
    k2: int = None
    max_samples: int = None
    master_seed: int = None
    tol: float = None
    horizon: float = None
    step: float = None
    threads: int = None

    def __post_init__(self):
        cfg = get_config()
        defaults = {'k1': cfg.DEFAULT_K1, 'k2': cfg.DEFAULT_K2, 'max_samples': cfg.DEFAULT_MAX_SAMPLES,
                    'tol': cfg.DEFAULT_TOL, 'horizon': cfg.DEFAULT_HORIZON, 'step': cfg.DEFAULT_STEP,
                    'threads': cfg.THREADS}
        for name, value in defaults.items():
            if getattr(self, name) is None:
                setattr(self, name, value)
        if not 0 < self.c < 1:
            raise TestConfigError(f'c must lie in (0, 1), got {self.c!r}')
        if not 0 < self.alpha_d < 1:
            raise TestConfigError(f'alpha_d must lie in (0, 1), got {self.alpha_d!r}')
        if self.k1 < 1 or self.k2 < 1:
            raise TestConfigError(f'batch sizes must be >= 1, got k1={self.k1}, k2={self.k2}')
        if self.max_samples < 1:
            raise TestConfigError(f'max_samples must be >= 1, got {self.max_samples}')
        if self.master_seed is not None and self.master_seed < 0:
            raise TestConfigError(f'seed must be non-negative, got {self.master_seed}')
        if not (self.tol > 0 and self.horizon > 0 and self.step > 0):
            raise TestConfigError('tol, horizon and step must be positive')
        if self.threads < 1:
            raise TestConfigError(f'threads must be >= 1, got {self.threads}')


@dataclass
class TestState:
    """Running sample sets with the statistic and confidence they imply"""

    __test__ = False

    dim: int
    x: SampleSet = None
    y: SampleSet = None
    delta: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        self.x = self.x or SampleSet(self.dim)
        self.y = self.y or SampleSet(self.dim)

    @property
    def n(self):
        return len(self.x)

    @property
    def m(self):
        return len(self.y)

    def update(self, new_x, new_y, c):
        self.x.extend(new_x)
        self.y.extend(new_y)
        if self.dim == 1:
            self.delta = delta_scalar(self.x, self.y)
        else:
            self.delta = delta_multi(self.x, self.y)
        self.alpha = confidence_level(self.delta, c, self.n, self.m)


@dataclass
class Timings:
    sim: float = 0.0
    monitor: float = 0.0
    test: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, name, seconds):
        with self._lock:
            setattr(self, name, getattr(self, name) + seconds)


@dataclass
class ConformanceReport:
    assertion: Assertion
    delta: float
    n: int
    m: int
    alpha: float
    config: TestConfig
    summaries: dict = field(default_factory=dict)
    reason: str = None
    formula: str = None
    parameters: list = field(default_factory=list)
    systems: list = field(default_factory=list)
    input: str = None
    sim_time_s: float = 0.0
    monitor_time_s: float = 0.0
    test_time_s: float = 0.0
    wall_time_s: float = 0.0

    @property
    def samples_total(self):
        return self.n + self.m

    def to_dict(self):
        cfg = self.config
        return {
            'assertion': self.assertion.value,
            'hypothesis': self.assertion.hypothesis,
            'reason': self.reason,
            'c': cfg.c,
            'alpha_d': cfg.alpha_d,
            'alpha': self.alpha,
            'delta': self.delta,
            'n': self.n,
            'm': self.m,
            'samples_total': self.samples_total,
            'seed': cfg.master_seed,
            'k1': cfg.k1,
            'k2': cfg.k2,
            'max_samples': cfg.max_samples,
            'tol': cfg.tol,
            'horizon': cfg.horizon,
            'step': cfg.step,
            'formula': self.formula,
            'parameters': self.parameters,
            'systems': self.systems,
            'input': self.input,
            'summaries': self.summaries,
            'sim_time_s': self.sim_time_s,
            'monitor_time_s': self.monitor_time_s,
            'test_time_s': self.test_time_s,
            'wall_time_s': self.wall_time_s,
        }

    def summary_line(self):
        line = (f'{self.assertion.value}: delta={self.delta:.2f} c={self.config.c:g} '
                f'alpha={self.alpha:.3f} (alpha_d={self.config.alpha_d:g}) n={self.n} m={self.m}')
        return f'{line} reason="{self.reason}"' if self.reason else line


def summarize_side(values):
    """Per-coordinate min/median/max of the finite values and counts of +-inf"""
    points = np.asarray(values, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    summary = []
    for column in points.T:
        finite = column[np.isfinite(column)]
        summary.append({
            'min': float(finite.min()) if finite.size else None,
            'median': float(np.median(finite)) if finite.size else None,
            'max': float(finite.max()) if finite.size else None,
            'n_pos_inf': int(np.sum(column == math.inf)),
            'n_neg_inf': int(np.sum(column == -math.inf)),
        })
    return summary


def _draw_batch(sampler, side, seed, start, count, executor):
    keys = [(seed, side, index) for index in range(start, start + count)]

    def draw(key):
        try:
            return np.atleast_1d(np.asarray(sampler(key), dtype=float))
        except (TracePoolExhausted, SamplesExhausted, MonotonicityError, SeparabilityError):
            raise
        except Exception as exc:
            raise SamplerError(f'sampler {SIDES[side]} failed on sample {key[2]}: {exc}',
                               side=SIDES[side], index=key[2]) from exc

    if executor is None:
        return [draw(key) for key in keys]
    return list(executor.map(draw, keys))


def run_equality_test(sampler_x, sampler_y, cfg, timings=None, describe=None):
    """Sequentially decide whether two sample distributions are within ``c``.

    Samplers are callables taking the key ``(master_seed, side, index)`` and
    returning a scalar or a K-vector. The loop ends in CONFORM or NONCONFORM
    once the confidence reaches ``alpha_d``, or INCONCLUSIVE when a side hits
    ``max_samples`` or a sample source runs dry.
    """
    if cfg.master_seed is None:
        cfg.master_seed = entropy_seed()
    timings = timings or Timings()
    describe = describe or {}
    started = time.perf_counter()
    log_activity('run-start', f'c={cfg.c} alpha_d={cfg.alpha_d} seed={cfg.master_seed}')

    state = None
    reason = None
    executor = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        while True:
            if state is not None and (state.n >= cfg.max_samples or state.m >= cfg.max_samples):
                reason = f'sample budget exhausted ({cfg.max_samples} per side)'
                break
            n, m = (state.n, state.m) if state else (0, 0)
            # the last batch is clamped to the per-side cap
            k1 = min(cfg.k1, cfg.max_samples - n)
            k2 = min(cfg.k2, cfg.max_samples - m)
            try:
                batch_x = _draw_batch(sampler_x, 1, cfg.master_seed, n, k1, executor)
                batch_y = _draw_batch(sampler_y, 2, cfg.master_seed, m, k2, executor)
            except (TracePoolExhausted, SamplesExhausted) as exc:
                reason = str(exc)
                break
            tick = time.perf_counter()
            if state is None:
                dims = {len(v) for v in batch_x + batch_y}
                if len(dims) != 1:
                    raise SamplerError(f'samples have mixed dimensions {sorted(dims)}')
                state = TestState(dims.pop())
            try:
                state.update(batch_x, batch_y, cfg.c)
            except StatsError as exc:
                raise SamplerError(str(exc)) from exc
            timings.add('test', time.perf_counter() - tick)
            logger.debug('n=%d m=%d delta=%.4f alpha=%.4f', state.n, state.m, state.delta, state.alpha)
            if state.alpha >= cfg.alpha_d:
                break
    finally:
        if executor is not None:
            executor.shutdown()

    if reason is None:
        assertion = assert_hypothesis(state.delta, cfg.c)
    else:
        assertion = Assertion.INCONCLUSIVE
        if state is not None:
            best = max_confidence(cfg.c, state.n, state.m)
            reason = (f'{reason}; at n={state.n}, m={state.m} no statistic reaches more than '
                      f'{best:.3f} confidence (alpha_d={cfg.alpha_d:g})')
    report = ConformanceReport(
        assertion=assertion,
        delta=state.delta if state else 0.0,
        n=state.n if state else 0,
        m=state.m if state else 0,
        alpha=state.alpha if state else 0.0,
        config=cfg,
        summaries={'X': summarize_side(state.x.points), 'Y': summarize_side(state.y.points)} if state else {},
        reason=reason,
        sim_time_s=timings.sim,
        monitor_time_s=timings.monitor,
        test_time_s=timings.test,
        wall_time_s=time.perf_counter() - started,
        **describe,
    )
    log_activity('run-end', report.summary_line())
    return report


def critical_vector(trace, pf, tol=None):
    """Critical value of every parameter, the others held at their bracket midpoints"""
    if pf.dimension < 1:
        raise SeparabilityError('formula has no parameters to test')
    if pf.dimension > get_config().MAX_DIMENSION:
        raise SeparabilityError(f'at most {get_config().MAX_DIMENSION} parameters are supported')
    return np.array([critical_parameter(pf, trace, i, tol) for i in range(pf.dimension)])


def _permissive_end(spec):
    return spec.hi if spec.direction is Monotonicity.INCREASING else spec.lo


def check_separability(pf, traces, tol=None):
    """Spot-check that each parameter's critical value does not depend on the others.

    The critical value of parameter ``i`` with the others at their bracket
    midpoints must match (within ``2 * tol``) the one with each other
    parameter moved to the end of its bracket where it is easiest to satisfy.
    """
    tol = get_config().DEFAULT_TOL if tol is None else tol
    if pf.dimension < 2:
        return
    mids = [0.5 * sum(spec.require_bracket()) for spec in pf.params]
    for trace in traces:
        for i, spec in enumerate(pf.params):
            base = critical_parameter(pf, trace, i, tol, others=mids)
            for j, other in enumerate(pf.params):
                if j == i:
                    continue
                moved = list(mids)
                moved[j] = _permissive_end(other)
                value = critical_parameter(pf, trace, i, tol, others=moved)
                same = value == base or abs(value - base) <= 2 * tol
                if not same:
                    raise SeparabilityError(
                        f'trace {trace.id or "?"}: critical {spec.name} is {base:g} with {other.name} '
                        f'at its midpoint but {value:g} at {moved[j]:g}; the parameters are not '
                        'separable, so per-trace critical vectors do not describe the satisfaction '
                        'function (evaluate it on a parameter grid instead)')


def run_conformance(sys1, sys2, input, pf, cfg):
    """Decide probabilistic conformance of two systems for every instance of ``pf``"""
    timings = Timings()
    input = input if input is not None else NO_INPUT
    tol = cfg.tol

    def sampler_for(system):
        def sampler(key):
            tick = time.perf_counter()
            trace = sample_path(system, input, key, cfg.horizon, cfg.step)
            if trace.id is None:
                trace = trace.with_id(f'{system.name}#{key[2]}')
            timings.add('sim', time.perf_counter() - tick)
            tick = time.perf_counter()
            if key[2] == 0 and pf.dimension > 1:
                check_separability(pf, [trace], tol)
            vector = critical_vector(trace, pf, tol)
            timings.add('monitor', time.perf_counter() - tick)
            return vector
        return sampler

    describe = {
        'formula': formula_to_text(pf) if not pf.text else pf.text,
        'parameters': [{'name': s.name, 'direction': s.direction.value, 'lo': s.lo, 'hi': s.hi}
                       for s in pf.params],
        'systems': [sys1.name, sys2.name],
        'input': input.describe(),
    }
    return run_equality_test(sampler_for(sys1), sampler_for(sys2), cfg, timings, describe)


# ------------------------------------------------------------------
#  Sample sources for the plain two-sample test
# ------------------------------------------------------------------
def sequence_sampler(values):
    """Serve recorded samples in order; the index in the key picks the row"""
    values = [np.atleast_1d(np.asarray(v, dtype=float)) for v in values]

    def sampler(key):
        index = key[2]
        if index >= len(values):
            raise SamplesExhausted(f'sample file exhausted after {len(values)} values')
        return values[index]
    return sampler


def distribution_sampler(draw):
    """Wrap ``draw(rng)`` so each key gets its own counter-based stream"""
    def sampler(key):
        return draw(path_rng(key))
    return sampler

