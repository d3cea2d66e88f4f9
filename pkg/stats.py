"""Two-sample statistics on critical-value samples.

ECDFs are right-closed: ``F(a) = #{X <= a} / n``. An alternation is a vector
of signs; the alternated ECDF of a sample is the ECDF of the sign-flipped
sample, so ``-1`` coordinates turn a CDF into a complementary one. Infinite
critical values take part as ordinary points.
"""
import enum
import itertools
import logging
import math

import numpy as np
from scipy.stats import kstwobign

from config import get_config
from utils import ConformaError

logger = logging.getLogger(__name__)


class StatsError(ConformaError):
    """Invalid input to a statistic"""


class Assertion(enum.Enum):
    CONFORM = 'conform'
    NONCONFORM = 'nonconform'
    INCONCLUSIVE = 'inconclusive'

    @property
    def hypothesis(self):
        return {'conform': 'H0', 'nonconform': 'H1'}.get(self.value, '-')


def ks_cdf(x):
    """Limiting Kolmogorov-Smirnov distribution H(x); 0 at and below ``KS_FLOOR``"""
    x = float(x)
    if math.isnan(x) or x < 0:
        raise StatsError(f'ks_cdf needs x >= 0, got {x!r}')
    if x <= get_config().KS_FLOOR:
        return 0.0
    return float(kstwobign.cdf(x))


def alternations(k):
    """All 2**k sign vectors, identity first"""
    if k < 1:
        raise StatsError(f'dimension must be >= 1, got {k}')
    return list(itertools.product((1, -1), repeat=k))


def _as_points(values, dim=None):
    points = np.asarray(values, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1) if dim in (None, 1) else points.reshape(1, -1)
    if points.ndim != 2:
        raise StatsError(f'samples must be a list of vectors, got shape {points.shape}')
    if dim is not None and points.shape[1] != dim:
        raise StatsError(f'sample dimension {points.shape[1]} != {dim}')
    if np.isnan(points).any():
        raise StatsError('samples must not contain NaN')
    return points


class SampleSet:
    """Append-only set of K-vectors; ``points`` is a read-only (n, K) view"""

    def __init__(self, dim, points=None):
        if dim < 1:
            raise StatsError(f'dimension must be >= 1, got {dim}')
        self.dim = dim
        self._buffer = np.empty((16, dim))
        self._size = 0
        if points is not None:
            self.extend(points)

    def __len__(self):
        return self._size

    def extend(self, points):
        points = _as_points(points, self.dim)
        need = self._size + len(points)
        if need > len(self._buffer):
            grown = np.empty((max(need, 2 * len(self._buffer)), self.dim))
            grown[:self._size] = self._buffer[:self._size]
            self._buffer = grown
        self._buffer[self._size:need] = points
        self._size = need

    @property
    def points(self):
        view = self._buffer[:self._size]
        view.setflags(write=False)
        return view


def _points_of(samples, dim=None):
    if isinstance(samples, SampleSet):
        return samples.points
    return _as_points(samples, dim)


class Ecdf:
    """Empirical CDF of a sample set, evaluable under any alternation"""

    def __init__(self, points):
        self.points = _points_of(points)
        if len(self.points) == 0:
            raise StatsError('ECDF of an empty sample')
        self.dim = self.points.shape[1]

    @classmethod
    def from_samples(cls, samples):
        return cls(samples)

    def evaluate(self, query, signs=None):
        """``F^pi(query)``: fraction of points whose sign-flipped copy is <= query.

        Scalar samples take a scalar or an array of queries; K-vector samples
        take one K-vector or an (N, K) array.
        """
        n = len(self.points)
        signs = np.ones(self.dim) if signs is None else np.asarray(signs, dtype=float)
        flipped = self.points * signs
        query = np.asarray(query, dtype=float)
        if self.dim == 1:
            return np.searchsorted(np.sort(flipped[:, 0]), query, side='right') / n
        single = query.ndim == 1
        query = query.reshape(-1, self.dim)
        result = _count_below(flipped, query) / n
        return float(result[0]) if single else result


def delta_scalar(x, y):
    """Sup-distance between the ECDFs of two scalar samples (merged sweep)"""
    xs = np.sort(_points_of(x, 1)[:, 0])
    ys = np.sort(_points_of(y, 1)[:, 0])
    if xs.size == 0 or ys.size == 0:
        raise StatsError('delta of an empty sample')
    breaks = np.concatenate((xs, ys))
    fx = np.searchsorted(xs, breaks, side='right') / xs.size
    fy = np.searchsorted(ys, breaks, side='right') / ys.size
    return float(np.max(np.abs(fx - fy)))


def _count_below(points, queries):
    """For each query row, how many points are <= it in every coordinate.

    Queries are processed in chunks so the comparison block stays under
    ``DELTA_CHUNK_ELEMENTS`` booleans.
    """
    budget = get_config().DELTA_CHUNK_ELEMENTS
    rows = max(1, budget // max(1, points.size))
    counts = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), rows):
        block = queries[start:start + rows]
        counts[start:start + rows] = np.all(points[None, :, :] <= block[:, None, :], axis=2).sum(axis=1)
    return counts


def _orthant_sup(p, q):
    """Max of |F_p - F_q| over the combined sample points"""
    queries = np.concatenate((p, q))
    fp = _count_below(p, queries) / len(p)
    fq = _count_below(q, queries) / len(q)
    return float(np.max(np.abs(fp - fq)))


def delta_multi(x, y, dim=None):
    """Max over all alternations of |F_x - F_y|, evaluated at the combined sample points"""
    p = _points_of(x, dim)
    q = _points_of(y, p.shape[1])
    if len(p) == 0 or len(q) == 0:
        raise StatsError('delta of an empty sample')
    k = p.shape[1]
    if k > get_config().MAX_DIMENSION:
        raise StatsError(f'unsupported dimension {k} (at most {get_config().MAX_DIMENSION})')
    if k == 1:
        return delta_scalar(p, q)
    best = 0.0
    for signs in alternations(k):
        signs = np.asarray(signs, dtype=float)
        best = max(best, _orthant_sup(p * signs, q * signs))
        if best >= 1.0:
            break
    return best


def confidence_level(delta, c, n, m):
    """Lower bound on the probability that the assertion for ``delta`` is right"""
    if n < 1 or m < 1:
        raise StatsError(f'sample counts must be >= 1, got n={n}, m={m}')
    if c <= 0:
        raise StatsError(f'threshold c must be positive, got {c!r}')
    if delta == c:
        return 0.0
    return ks_cdf(abs(delta - c) * math.sqrt(n * m / (n + m)))


def assert_hypothesis(delta, c):
    """H0 (conform) when ``delta < c``; ties go to H1"""
    return Assertion.CONFORM if delta < c else Assertion.NONCONFORM


def max_confidence(c, n, m):
    """Best confidence any statistic in [0, 1] can reach with n and m samples"""
    return confidence_level(0.0 if c >= 0.5 else 1.0, c, n, m)


def min_balanced_samples(gap, alpha_d, limit=10**9):
    """Smallest ``n = m`` with ``H(gap * sqrt(n / 2)) >= alpha_d``"""
    if not 0 < gap <= 1:
        raise StatsError(f'gap must lie in (0, 1], got {gap!r}')
    if not 0 < alpha_d < 1:
        raise StatsError(f'alpha_d must lie in (0, 1), got {alpha_d!r}')

    def enough(n):
        return ks_cdf(gap * math.sqrt(n / 2.0)) >= alpha_d

    hi = 1
    while not enough(hi):
        hi *= 2
        if hi > limit:
            raise StatsError(f'no sample count up to {limit} reaches confidence {alpha_d}')
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if enough(mid):
            hi = mid
        else:
            lo = mid
    return hi
