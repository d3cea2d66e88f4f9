"""Finite sampled paths and their CSV form.

A trace holds its signal piecewise-constant: the value at time ``t`` is the row
recorded at the greatest timestamp ``<= t``. Discrete state components are
carried as integer-valued real columns.
"""
import csv
import itertools
import logging
import math
from pathlib import Path

import numpy as np

from config import get_config
from utils import ConformaError

logger = logging.getLogger(__name__)

TIME_COLUMN = 'time'
ID_COLUMN = 'trace_id'


class TraceFormatError(ConformaError):
    """A trace (or the file it came from) violates the trace invariants"""

    def __init__(self, message, path=None, row=None, trace_id=None):
        parts = []
        if path is not None:
            parts.append(str(path))
        if row is not None:
            parts.append(f'row {row}')
        if trace_id is not None:
            parts.append(f'trace {trace_id}')
        prefix = ', '.join(parts)
        super().__init__(f'{prefix}: {message}' if prefix else message)
        self.path = path
        self.row = row
        self.trace_id = trace_id


class TraceDomainError(ConformaError):
    """A time query falls outside the trace's domain"""


def _frozen(array):
    array.setflags(write=False)
    return array


class Trace:
    """Immutable, timestamped, vector-valued sample path.

    ``shift`` returns a view sharing the base arrays: it only moves the time
    origin, so shifting never copies rows.
    """

    __slots__ = ('variables', 'id', '_times', '_values', '_offset', '_start')

    def __init__(self, variables, timestamps, values, id=None):
        variables = tuple(variables)
        if len(set(variables)) != len(variables):
            raise TraceFormatError(f'duplicate signal names in {variables!r}', trace_id=id)
        times = np.array(timestamps, dtype=float)
        rows = np.array(values, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise TraceFormatError('a trace needs at least one timestamp', trace_id=id)
        if rows.ndim == 1 and len(variables) == 1:
            rows = rows.reshape(-1, 1)
        if rows.shape != (times.size, len(variables)):
            raise TraceFormatError(
                f'values have shape {rows.shape}, expected {(times.size, len(variables))}',
                trace_id=id)
        if times[0] != 0.0:
            raise TraceFormatError(f'first timestamp must be 0, got {times[0]!r}', trace_id=id)
        steps = np.diff(times)
        if np.any(steps <= 0):
            bad = int(np.argmax(steps <= 0)) + 1
            raise TraceFormatError(f'non-increasing timestamp at sample {bad}', trace_id=id)
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(rows)):
            raise TraceFormatError('timestamps and values must be finite', trace_id=id)
        self.variables = variables
        self.id = id
        self._times = _frozen(times)
        self._values = _frozen(rows)
        self._offset = 0.0
        self._start = 0

    @classmethod
    def _view(cls, base, offset, start):
        view = cls.__new__(cls)
        view.variables = base.variables
        view.id = base.id
        view._times = base._times
        view._values = base._values
        view._offset = offset
        view._start = start
        return view

    def __len__(self):
        return self._times.size - self._start

    def __repr__(self):
        return f'<Trace {self.id or "?"} vars={list(self.variables)} samples={len(self)}>'

    @property
    def end_time(self):
        return float(self._times[-1] - self._offset)

    @property
    def timestamps(self):
        """Timestamps re-based to this view's origin (first is always 0)"""
        if self._start == 0 and self._offset == 0.0:
            return self._times
        times = self._times[self._start:] - self._offset
        times[0] = 0.0
        return _frozen(times)

    @property
    def values(self):
        if self._start == 0:
            return self._values
        return self._values[self._start:]

    def index_of(self, name):
        try:
            return self.variables.index(name)
        except ValueError:
            raise TraceFormatError(f'signal {name!r} missing from trace', trace_id=self.id) from None

    def column(self, name):
        return self.values[:, self.index_of(name)]

    def with_id(self, id):
        renamed = Trace._view(self, self._offset, self._start)
        renamed.id = id
        return renamed

    def _check_time(self, t):
        eps = get_config().TIME_EPS
        if not (-eps <= t <= self.end_time + eps):
            raise TraceDomainError(
                f'time {t!r} outside trace domain [0, {self.end_time!r}]'
                + (f' (trace {self.id})' if self.id is not None else ''))

    def _row_at(self, t):
        # absolute time in the base arrays
        absolute = t + self._offset
        row = int(np.searchsorted(self._times, absolute, side='right')) - 1
        return max(row, self._start)

    def sample_at(self, t):
        self._check_time(t)
        return self._values[self._row_at(t)]

    def shift(self, t):
        self._check_time(t)
        t = min(max(t, 0.0), self.end_time)
        return Trace._view(self, self._offset + t, self._row_at(t))


def sample_at(trace, t):
    """Held value of every signal at time ``t``"""
    return trace.sample_at(t)


def shift(trace, t):
    """The ``t``-shift of a trace: time 0 of the result is time ``t`` of the input"""
    return trace.shift(t)


def _parse_float(text, path, row, trace_id, column):
    try:
        value = float(text)
    except ValueError:
        raise TraceFormatError(f'column {column!r}: not a number: {text!r}',
                               path=path, row=row, trace_id=trace_id) from None
    if not math.isfinite(value):
        raise TraceFormatError(f'column {column!r}: non-finite value {text!r}',
                               path=path, row=row, trace_id=trace_id)
    return value


def _decoded_lines(handle, path):
    """UTF-8 lines of a binary file; decoding and read failures name the row"""
    lines = iter(handle)
    for row in itertools.count(1):
        try:
            raw = next(lines)
        except StopIteration:
            return
        except OSError as exc:
            raise TraceFormatError(f'read failed: {exc.strerror or exc}', path=path, row=row) from exc
        try:
            line = raw.decode('utf-8-sig' if row == 1 else 'utf-8')
        except UnicodeDecodeError as exc:
            raise TraceFormatError(f'invalid UTF-8 at byte {exc.start}', path=path, row=row) from None
        yield line


def load_traces_csv(path, default_id=None):
    """Load every trace in one CSV file.

    The header is ``time,<vars...>`` with an optional ``trace_id`` column; rows of
    one trace must appear with strictly increasing timestamps.
    """
    path = Path(path)
    try:
        handle = path.open('rb')
    except OSError as exc:
        raise TraceFormatError(f'cannot open: {exc.strerror or exc}', path=path) from exc
    with handle:
        reader = csv.reader(_decoded_lines(handle, path))
        try:
            header = [name.strip() for name in next(reader)]
        except StopIteration:
            raise TraceFormatError('empty file', path=path) from None
        if not header or header[0] != TIME_COLUMN:
            raise TraceFormatError(f'header must start with {TIME_COLUMN!r}', path=path, row=1)
        id_col = header.index(ID_COLUMN) if ID_COLUMN in header else None
        variables = [name for i, name in enumerate(header) if i != 0 and i != id_col]
        if not variables:
            raise TraceFormatError('no signal columns', path=path, row=1)
        if len(set(header)) != len(header):
            raise TraceFormatError('duplicate column names', path=path, row=1)

        groups = {}
        for row_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            trace_id = row[id_col].strip() if id_col is not None and id_col < len(row) else default_id
            if len(row) != len(header):
                raise TraceFormatError(f'expected {len(header)} fields, got {len(row)}',
                                       path=path, row=row_number, trace_id=trace_id)
            time = _parse_float(row[0], path, row_number, trace_id, TIME_COLUMN)
            values = [_parse_float(row[i], path, row_number, trace_id, name)
                      for i, name in enumerate(header) if i != 0 and i != id_col]
            times, rows = groups.setdefault(trace_id, ([], []))
            if times and time <= times[-1]:
                raise TraceFormatError(f'non-increasing timestamp at row {row_number}',
                                       path=path, row=row_number, trace_id=trace_id)
            if not times and time != 0.0:
                raise TraceFormatError(f'first timestamp must be 0, got {time!r}',
                                       path=path, row=row_number, trace_id=trace_id)
            times.append(time)
            rows.append(values)

    if not groups:
        raise TraceFormatError('no data rows', path=path)
    traces = [Trace(variables, times, rows, id=trace_id)
              for trace_id, (times, rows) in groups.items()]
    logger.debug('loaded %d trace(s) from %s', len(traces), path)
    return traces


def load_traces(path):
    """Load traces from a CSV file or from every ``*.csv`` file in a directory"""
    path = Path(path)
    if not path.exists():
        raise TraceFormatError('no such file or directory', path=path)
    if not path.is_dir():
        return load_traces_csv(path)
    traces = []
    for file in sorted(path.glob('*.csv')):
        traces.extend(load_traces_csv(file, default_id=file.stem))
    if not traces:
        raise TraceFormatError('directory holds no *.csv traces', path=path)
    return traces


def write_traces_csv(traces, path):
    """Write traces to one CSV file; floats are written round-trip exact"""
    traces = list(traces)
    if not traces:
        raise TraceFormatError('nothing to write', path=path)
    variables = traces[0].variables
    for trace in traces:
        if trace.variables != variables:
            raise TraceFormatError('traces do not share one signature', path=path, trace_id=trace.id)
    with_ids = len(traces) > 1
    header = [TIME_COLUMN, *variables] + ([ID_COLUMN] if with_ids else [])
    path = Path(path)
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for index, trace in enumerate(traces):
            trace_id = trace.id if trace.id is not None else str(index)
            for time, row in zip(trace.timestamps, trace.values):
                cells = [repr(float(time))] + [repr(float(v)) for v in row]
                if with_ids:
                    cells.append(trace_id)
                writer.writerow(cells)
    return path
