"""Grey-box stochastic systems: anything that turns (input, seed) into a Trace.

Every built-in system draws its random parameters once per path from
``utils.path_rng(seed)``; ``seed`` is an integer or the ``(master_seed,
stream, index)`` key the engine uses, and equal seeds give bit-identical
traces.
"""
import abc
import logging
import math
import threading
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from config import get_config
from traces import Trace, TraceFormatError, load_traces
from utils import ConformaError, path_rng

logger = logging.getLogger(__name__)


class SimulationError(ConformaError):
    """A simulator was configured or driven with invalid values"""


class TracePoolExhausted(ConformaError):
    """A replay system has handed out every recorded trace"""


def time_grid(horizon, step):
    """0, step, 2*step, ... up to and including ``horizon``"""
    if not (horizon > 0 and step > 0) or not math.isfinite(horizon):
        raise SimulationError(f'horizon and step must be positive, got {horizon!r}, {step!r}')
    count = int(math.floor(horizon / step + 1e-9))
    return np.arange(count + 1) * step


def _with_events(grid, events):
    """Merge event times into a grid; grid points that coincide with an event are dropped"""
    events = np.asarray(events, dtype=float)
    if events.size == 0:
        return grid
    eps = get_config().TIME_EPS
    near = np.abs(grid[:, None] - events[None, :]).min(axis=1) <= eps
    near[0] = False
    events = events[events > eps]
    return np.union1d(grid[~near], events)


def _seed_key(seed):
    if isinstance(seed, tuple):
        return seed
    return (int(seed),)


# ------------------------------------------------------------------
#  Inputs
# ------------------------------------------------------------------
class InputSignal:
    """Named input signals: constants, or a table held piecewise-constant"""

    def __init__(self, constants=None, times=None, table=None):
        self.constants = dict(constants or {})
        self.times = None if times is None else np.asarray(times, dtype=float)
        self.table = {name: np.asarray(col, dtype=float) for name, col in (table or {}).items()}
        if self.times is not None and (self.times.size == 0 or self.times[0] != 0.0
                                       or np.any(np.diff(self.times) <= 0)):
            raise SimulationError('tabulated input needs strictly increasing times starting at 0')
        overlap = set(self.constants) & set(self.table)
        if overlap:
            raise SimulationError(f'inputs defined twice: {sorted(overlap)!r}')

    @classmethod
    def from_csv(cls, path, constants=None):
        try:
            (trace,) = load_traces(path)
        except ValueError:
            raise SimulationError(f'{path}: an input table must hold exactly one trace') from None
        table = {name: trace.column(name) for name in trace.variables}
        return cls(constants, trace.timestamps, table)

    @property
    def names(self):
        return sorted(set(self.constants) | set(self.table))

    def value(self, name, t):
        if name in self.constants:
            return float(self.constants[name])
        if name in self.table:
            row = int(np.searchsorted(self.times, t, side='right')) - 1
            return float(self.table[name][max(row, 0)])
        raise SimulationError(f'input {name!r} is not defined')

    def values(self, name, times, default=None):
        """Held input values at many times; ``default`` stands in for a missing input"""
        if name not in self.constants and name not in self.table:
            if default is None:
                raise SimulationError(f'input {name!r} is not defined')
            return np.full(len(times), float(default))
        if name in self.constants:
            return np.full(len(times), float(self.constants[name]))
        rows = np.searchsorted(self.times, times, side='right') - 1
        return self.table[name][np.maximum(rows, 0)]

    def describe(self):
        parts = [f'{k}={v:g}' for k, v in sorted(self.constants.items())]
        parts += [f'{k}=<table>' for k in sorted(self.table)]
        return ', '.join(parts) or 'none'


NO_INPUT = InputSignal()


# ------------------------------------------------------------------
#  Interface
# ------------------------------------------------------------------
class GreyBoxSystem(abc.ABC):
    """Sampling view of a stochastic system"""

    name = 'system'
    variables = ()

    @abc.abstractmethod
    def sample_path(self, input, seed, horizon, step):
        """Draw one path; deterministic in ``seed``"""

    def __repr__(self):
        return f'<{type(self).__name__} {self.name}>'


def sample_path(system, input, seed, horizon, step):
    time_grid(horizon, step)
    return system.sample_path(input if input is not None else NO_INPUT, seed, horizon, step)


@dataclass(frozen=True)
class _Params:
    @classmethod
    def from_section(cls, section):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in section.items() if k in known and v is not None})


# ------------------------------------------------------------------
#  Bouncing ball
# ------------------------------------------------------------------
@dataclass(frozen=True)
class BouncingBallParams(_Params):
    x0: float = 1.0
    g0: float = 9.8
    sigma: float = 0.0
    restitution: float = 1.0

    def __post_init__(self):
        if not self.x0 > 0:
            raise SimulationError(f'x0 must be positive, got {self.x0!r}')
        if not self.g0 > 0:
            raise SimulationError(f'g0 must be positive, got {self.g0!r}')
        if not self.sigma >= 0:
            raise SimulationError(f'sigma must be non-negative, got {self.sigma!r}')
        if not 0 < self.restitution <= 1:
            raise SimulationError(f'restitution must lie in (0, 1], got {self.restitution!r}')


# arcs slower than this are treated as the ball coming to rest
REST_SPEED = 1e-9


def draw_gravity(p, rng):
    """Gravity for one path; non-positive draws are redrawn from the same stream"""
    for _ in range(get_config().BOUNCING_BALL_MAX_REDRAWS):
        g = p.g0 + p.sigma * rng.standard_normal()
        if g > 0:
            return g
    raise SimulationError(f'no positive gravity in {get_config().BOUNCING_BALL_MAX_REDRAWS} draws '
                          f'from N({p.g0}, {p.sigma}^2)')


def ballistic_arcs(x0, g, restitution, horizon):
    """Launch times and upward launch speeds of the ball's arcs.

    Arc 0 is the initial drop, launched virtually at ``-sqrt(2 x0 / g)``; arc
    ``k >= 1`` starts at the k-th ground contact. The last entry may be an
    arc of speed 0 marking when the ball comes to rest.
    """
    speed = math.sqrt(2.0 * g * x0)
    starts, speeds = [-speed / g], [speed]
    while True:
        start = starts[-1] + 2.0 * speeds[-1] / g
        if start > horizon:
            break
        speed = restitution * speeds[-1]
        if speed < REST_SPEED:
            starts.append(start)
            speeds.append(0.0)
            break
        starts.append(start)
        speeds.append(speed)
    return np.array(starts), np.array(speeds)


def simulate_bouncing_ball(p, seed, horizon, step=None):
    """Exact event-driven path of a ball under randomly drawn gravity.

    Height ``x`` and upward velocity ``v`` follow closed-form arcs; contact
    times are inserted as timestamps, where the row already holds the
    rebound velocity.
    """
    step = get_config().DEFAULT_STEP if step is None else step
    g = draw_gravity(p, path_rng(_seed_key(seed)))
    starts, speeds = ballistic_arcs(p.x0, g, p.restitution, horizon)
    times = _with_events(time_grid(horizon, step), starts[1:])
    arc = np.searchsorted(starts, times, side='right') - 1
    elapsed = times - starts[arc]
    x = speeds[arc] * elapsed - 0.5 * g * elapsed ** 2
    v = speeds[arc] - g * elapsed
    resting = speeds[arc] == 0.0
    x = np.where(resting, 0.0, np.maximum(x, 0.0))
    v = np.where(resting, 0.0, v)
    return Trace(('x', 'v'), times, np.column_stack((x, v)))


class BouncingBall(GreyBoxSystem):
    variables = ('x', 'v')

    def __init__(self, params=None, name='bouncing_ball'):
        self.params = params or BouncingBallParams()
        self.name = name

    def sample_path(self, input, seed, horizon, step):
        return simulate_bouncing_ball(self.params, seed, horizon, step)


# ------------------------------------------------------------------
#  Hitting-time model
# ------------------------------------------------------------------
@dataclass(frozen=True)
class HittingModelParams(_Params):
    distribution: str = 'uniform'
    a: float = 0.0
    b: float = 1.0
    mu: float = 0.5
    sd: float = 0.1
    shift: float = 0.0
    signal: str = 'x'
    high: float = 1.0
    low: float = 0.0

    def __post_init__(self):
        if self.distribution not in ('uniform', 'normal'):
            raise SimulationError(f'unknown hitting-time distribution {self.distribution!r}')
        if self.distribution == 'uniform' and not self.a < self.b:
            raise SimulationError(f'uniform hitting time needs a < b, got [{self.a}, {self.b}]')
        if self.distribution == 'normal' and not self.sd > 0:
            raise SimulationError(f'normal hitting time needs sd > 0, got {self.sd!r}')

    def draw(self, rng):
        if self.distribution == 'uniform':
            value = self.a + (self.b - self.a) * rng.random()
        else:
            value = self.mu + self.sd * rng.standard_normal()
        return value + self.shift

    def cdf(self, t):
        """Analytic CDF of the (unclipped) event time"""
        t = np.asarray(t, dtype=float) - self.shift
        if self.distribution == 'uniform':
            return np.clip((t - self.a) / (self.b - self.a), 0.0, 1.0)
        return 0.5 * (1.0 + np.vectorize(math.erf)((t - self.mu) / (self.sd * math.sqrt(2.0))))


class HittingModel(GreyBoxSystem):
    """Signal that drops from ``high`` to ``low`` at a random event time T"""

    def __init__(self, params=None, name='hitting'):
        self.params = params or HittingModelParams()
        self.name = name
        self.variables = (self.params.signal,)

    def event_time(self, seed, horizon):
        return min(max(self.params.draw(path_rng(_seed_key(seed))), 0.0), horizon)

    def sample_path(self, input, seed, horizon, step):
        event = self.event_time(seed, horizon)
        times = _with_events(time_grid(horizon, step), [event])
        values = np.where(times < event, self.params.high, self.params.low)
        if event <= get_config().TIME_EPS:
            values[:] = self.params.low
        return Trace(self.variables, times, values)


# ------------------------------------------------------------------
#  Second-order plant
# ------------------------------------------------------------------
@dataclass(frozen=True)
class SecondOrderParams(_Params):
    wn: float = 2.0
    zeta: float = 0.7
    noise_sd: float = 0.0
    band: float = 0.05
    wn_spread: float = 0.0
    y0_sd: float = 0.0
    gain: float = 1.0

    def __post_init__(self):
        if not self.wn > 0:
            raise SimulationError(f'wn must be positive, got {self.wn!r}')
        if not self.zeta > 0:
            raise SimulationError(f'zeta must be positive, got {self.zeta!r}')
        for name in ('noise_sd', 'wn_spread', 'y0_sd'):
            if not getattr(self, name) >= 0:
                raise SimulationError(f'{name} must be non-negative, got {getattr(self, name)!r}')
        if not self.band > 0:
            raise SimulationError(f'band must be positive, got {self.band!r}')


def rk4_matrices(a, b, h):
    """One classical RK4 step of ``x' = A x + B u`` with ``u`` held over the step,
    written as ``x_next = M x + N u``"""
    ha = h * a
    identity = np.eye(a.shape[0])
    ha2 = ha @ ha
    ha3 = ha2 @ ha
    m = identity + ha + ha2 / 2.0 + ha3 / 6.0 + ha3 @ ha / 24.0
    n = h * (identity + ha / 2.0 + ha2 / 6.0 + ha3 / 24.0) @ b
    return m, n


class SecondOrder(GreyBoxSystem):
    """``y'' + 2 zeta wn y' + wn^2 y = wn^2 (gain u + w)`` tracking the input ``u``.

    ``wn`` is drawn uniformly from ``[wn, wn + wn_spread]`` per path, ``y(0)``
    from ``N(0, y0_sd^2)`` and ``w`` is white noise held over each step. The
    trace carries the reference ``u``, the output ``y`` and ``e = y - u``.
    """

    variables = ('u', 'y', 'e')

    def __init__(self, params=None, name='second_order'):
        self.params = params or SecondOrderParams()
        self.name = name

    def sample_path(self, input, seed, horizon, step):
        p = self.params
        rng = path_rng(_seed_key(seed))
        wn = p.wn + p.wn_spread * rng.random()
        y0 = p.y0_sd * rng.standard_normal()
        times = time_grid(horizon, step)
        u = input.values('u', times, default=1.0)
        noise = p.noise_sd * rng.standard_normal(times.size)

        a = np.array([[0.0, 1.0], [-wn * wn, -2.0 * p.zeta * wn]])
        b = np.array([0.0, wn * wn])
        m, n = rk4_matrices(a, b, step)
        forcing = p.gain * u + noise
        state = np.array([y0, 0.0])
        y = np.empty(times.size)
        for k in range(times.size):
            y[k] = state[0]
            state = m @ state + n * forcing[k]
        if not np.all(np.isfinite(y)):
            raise SimulationError(f'{self.name}: integration diverged (step {step} too large for wn {wn:.3g})')
        return Trace(self.variables, times, np.column_stack((u, y, y - u)))

    def settling_time(self, trace):
        """First timestamp after which ``|e|`` stays inside the band"""
        outside = np.abs(trace.column('e')) >= self.params.band
        if outside[-1]:
            return math.inf
        if not outside.any():
            return 0.0
        return float(trace.timestamps[np.flatnonzero(outside)[-1] + 1])


# ------------------------------------------------------------------
#  Replay of recorded traces
# ------------------------------------------------------------------
class ReplaySystem(GreyBoxSystem):
    """Hands out recorded traces in a seed-derived order, without replacement.

    With an engine key ``(master_seed, stream, index)`` the order depends on
    ``(master_seed, stream)`` and ``index`` picks the position, so concurrent
    draws stay reproducible. A plain integer seed draws the next position.
    """

    def __init__(self, traces, name='replay'):
        self.traces = list(traces)
        if not self.traces:
            raise SimulationError('trace replay needs at least one trace')
        self.variables = self.traces[0].variables
        self.name = name
        self._lock = threading.Lock()
        self._orders = {}
        self._next = {}

    def _order(self, key):
        with self._lock:
            if key not in self._orders:
                self._orders[key] = path_rng(key).permutation(len(self.traces))
            return self._orders[key]

    def sample_path(self, input, seed, horizon, step):
        if isinstance(seed, tuple) and len(seed) >= 2:
            key, index = tuple(seed[:-1]), int(seed[-1])
        else:
            key = _seed_key(seed)
            with self._lock:
                index = self._next.get(key, 0)
                self._next[key] = index + 1
        order = self._order(key)
        if index >= len(order):
            raise TracePoolExhausted(
                f'trace pool exhausted (need more recorded samples than {len(order)})')
        return self.traces[order[index]]


def trace_replay_system(traces, name='replay'):
    """GreyBoxSystem over a finite pool of recorded traces"""
    return ReplaySystem(traces, name=name)


# ------------------------------------------------------------------
#  Registry
# ------------------------------------------------------------------
def _build_replay(section, name):
    source = section.get('traces')
    if not source:
        raise SimulationError(f'{name}: replay systems need a "traces" path')
    try:
        traces = load_traces(Path(source))
    except TraceFormatError as exc:
        raise SimulationError(f'{name}: {exc}') from exc
    return trace_replay_system(traces, name=name)


SYSTEM_KINDS = {
    'bouncing_ball': lambda s, name: BouncingBall(BouncingBallParams.from_section(s), name),
    'hitting': lambda s, name: HittingModel(HittingModelParams.from_section(s), name),
    'second_order': lambda s, name: SecondOrder(SecondOrderParams.from_section(s), name),
    'replay': _build_replay,
}


def build_system(section, name=None):
    """Build a system from a validated config section (``kind`` plus parameters)"""
    kind = section.get('kind')
    if kind not in SYSTEM_KINDS:
        raise SimulationError(f'unknown system kind {kind!r} (one of {", ".join(sorted(SYSTEM_KINDS))})')
    system = SYSTEM_KINDS[kind](section, name or kind)
    logger.debug('built system %r', system)
    return system


def load_input(section):
    """InputSignal from a validated ``[input]`` section"""
    if not section:
        return NO_INPUT
    constants = {k: v for k, v in section.items() if k != 'table' and v is not None}
    if section.get('table'):
        return InputSignal.from_csv(section['table'], constants)
    return InputSignal(constants)
