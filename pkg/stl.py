"""Parameterized Signal Temporal Logic: grammar, AST, monitor and critical values.

Grammar (whitespace-insensitive)::

    phi   ::= term | "true" | "false" | "!" phi | phi "&&" phi | phi "||" phi
            | phi "->" phi | "F[" t "," t "](" phi ")" | "G[" t "," t "](" phi ")"
            | phi "U[" t "," t "]" phi | "(" phi ")"
    term  ::= expr ("<" | "<=" | ">" | ">=") expr
    expr  ::= number | name | "abs(" expr ")" | "-" expr | expr "*" expr
            | expr "+" expr | expr "-" expr | "(" expr ")"
    t     ::= number | "inf" | ["-"] parameter

Precedence, tightest first: ``!``, ``U``, ``&&``, ``||``, ``->`` (right
associative). ``F``, ``G``, ``U``, ``abs``, ``true``, ``false`` and ``inf`` are
reserved and cannot name signals or parameters.

Until follows the satisfaction relation used throughout this package::

    s |= p1 U[a,b] p2  iff  exists t in [a, b] with s^(t) |= p2
                            and s^(t') |= p1 for every 0 <= t' < t

so ``p1`` must hold from time 0, not only from ``a``. Many STL tools only
require ``p1`` on ``[a, t)``; the two readings differ whenever ``a > 0``.
An interval with ``b < a``, ``a < 0`` or ``b < 0`` makes the Until false.
"""
import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pyparsing as pp

from config import get_config
from utils import ConformaError

logger = logging.getLogger(__name__)

pp.ParserElement.enable_packrat()


class FormulaError(ConformaError):
    """A formula is ill-formed for the requested operation"""


class FormulaSyntaxError(FormulaError):
    def __init__(self, message, line, col):
        super().__init__(f'syntax error at line {line}, column {col}: {message}')
        self.line = line
        self.col = col


class TraceTooShortError(FormulaError):
    """The trace ends before the formula's horizon"""


class MonotonicityError(FormulaError):
    def __init__(self, message, trace_id=None, parameter=None):
        super().__init__(message)
        self.trace_id = trace_id
        self.parameter = parameter


class SeparabilityError(FormulaError):
    """Critical values of one parameter depend on the values of another"""


class Monotonicity(enum.Enum):
    INCREASING = 'increasing'
    DECREASING = 'decreasing'

    @classmethod
    def from_text(cls, text):
        key = str(text).strip().lower()
        aliases = {'inc': cls.INCREASING, 'increasing': cls.INCREASING, '+': cls.INCREASING,
                   'dec': cls.DECREASING, 'decreasing': cls.DECREASING, '-': cls.DECREASING}
        try:
            return aliases[key]
        except KeyError:
            raise FormulaError(f'unknown monotonicity {text!r} (use increasing or decreasing)') from None

    def flipped(self):
        return Monotonicity.DECREASING if self is Monotonicity.INCREASING else Monotonicity.INCREASING


# ------------------------------------------------------------------
#  Arithmetic expressions
# ------------------------------------------------------------------
@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Abs:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


# ------------------------------------------------------------------
#  Formulas
# ------------------------------------------------------------------
@dataclass(frozen=True)
class ParamRef:
    """Interval endpoint bound to a parameter, scaled by ``sign``"""
    name: str
    sign: int = 1


@dataclass(frozen=True)
class Interval:
    lo: object
    hi: object


@dataclass(frozen=True)
class Atomic:
    """``expr > 0``"""
    expr: object


@dataclass(frozen=True)
class Not:
    arg: object


@dataclass(frozen=True)
class And:
    left: object
    right: object


@dataclass(frozen=True)
class Until:
    interval: Interval
    left: object
    right: object


TRUE = Atomic(Num(1.0))
FALSE = Not(TRUE)


def Or(left, right):
    return Not(And(Not(left), Not(right)))


def Implies(left, right):
    return Not(And(left, Not(right)))


def Finally(interval, arg):
    return Until(interval, TRUE, arg)


def Globally(interval, arg):
    return Not(Until(interval, TRUE, Not(arg)))


@dataclass(frozen=True)
class ParamSpec:
    name: str
    direction: Monotonicity = Monotonicity.INCREASING
    lo: float = None
    hi: float = None

    @property
    def bracket(self):
        return self.lo, self.hi

    def require_bracket(self):
        if self.lo is None or self.hi is None:
            raise FormulaError(f'parameter {self.name!r} has no search bracket')
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo >= self.hi:
            raise FormulaError(f'parameter {self.name!r}: bracket [{self.lo}, {self.hi}] '
                               'must be finite with lo < hi')
        return self.lo, self.hi


@dataclass(frozen=True)
class ParameterizedFormula:
    formula: object
    params: tuple = ()
    signature: tuple = ()
    text: str = field(default='', compare=False)

    @property
    def dimension(self):
        return len(self.params)

    @property
    def names(self):
        return tuple(p.name for p in self.params)


def parse_param_decl(text):
    """``name:direction[:lo:hi]`` -> ParamSpec"""
    parts = [part.strip() for part in str(text).split(':')]
    if len(parts) not in (2, 4) or not parts[0]:
        raise FormulaError(f'bad parameter declaration {text!r} (expected name:direction:lo:hi)')
    lo = hi = None
    if len(parts) == 4:
        try:
            lo, hi = float(parts[2]), float(parts[3])
        except ValueError:
            raise FormulaError(f'bad bracket in parameter declaration {text!r}') from None
    spec = ParamSpec(parts[0], Monotonicity.from_text(parts[1]), lo, hi)
    if lo is not None:
        spec.require_bracket()
    return spec


# ------------------------------------------------------------------
#  Grammar
# ------------------------------------------------------------------
def _fold_left(items, build):
    node = items[0]
    for i in range(1, len(items), 2):
        node = build(items[i], node, items[i + 1])
    return node


def _fold_right(items, build):
    node = items[-1]
    for i in range(len(items) - 2, 0, -2):
        node = build(items[i], items[i - 1], node)
    return node


def _arith_unary(tokens):
    op, arg = tokens[0]
    if isinstance(arg, Num):
        return Num(-arg.value)
    return Neg(arg)


def _arith_binary(tokens):
    return _fold_left(list(tokens[0]), lambda op, a, b: BinOp(op, a, b))


def _comparison(tokens):
    left, op, right = tokens
    if op in ('<', '<='):
        left, right = right, left
    if isinstance(right, Num) and right.value == 0.0:
        return Atomic(left)
    return Atomic(BinOp('-', left, right))


def _interval(tokens):
    return Interval(tokens[0], tokens[1])


def _finally(tokens):
    return Finally(tokens[1], tokens[2])


def _globally(tokens):
    return Globally(tokens[1], tokens[2])


def _negation(tokens):
    return Not(tokens[0][1])


def _until(tokens):
    return _fold_left(list(tokens[0]), lambda op, a, b: Until(op[1], a, b))


def _conjunction(tokens):
    return _fold_left(list(tokens[0]), lambda op, a, b: And(a, b))


def _disjunction(tokens):
    return _fold_left(list(tokens[0]), lambda op, a, b: Or(a, b))


def _implication(tokens):
    return _fold_right(list(tokens[0]), lambda op, a, b: Implies(a, b))


def _make_grammar():
    lpar, rpar = pp.Suppress('('), pp.Suppress(')')
    lbrack, rbrack, comma = pp.Suppress('['), pp.Suppress(']'), pp.Suppress(',')

    reserved = pp.MatchFirst(pp.Keyword(word) for word in ('F', 'G', 'U', 'abs', 'true', 'false', 'inf'))
    name = (~reserved + pp.Word(pp.alphas + '_', pp.alphanums + '_')).set_name('name')
    number = pp.Regex(r'(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?').set_name('number')
    number.set_parse_action(lambda t: Num(float(t[0])))

    arith = pp.Forward().set_name('expression')
    abs_call = pp.Suppress(pp.Keyword('abs')) + lpar + arith + rpar
    abs_call.set_parse_action(lambda t: Abs(t[0]))
    operand = number | abs_call | name.copy().set_parse_action(lambda t: Var(t[0]))
    minus = pp.Regex(r'-(?!>)')
    arith <<= pp.infix_notation(operand, [
        (minus, 1, pp.OpAssoc.RIGHT, _arith_unary),
        (pp.Literal('*'), 2, pp.OpAssoc.LEFT, _arith_binary),
        (pp.Literal('+') | minus, 2, pp.OpAssoc.LEFT, _arith_binary),
    ])
    comparator = pp.one_of('<= >= < >')
    term = (arith + comparator + arith).set_parse_action(_comparison)

    signed_number = pp.Regex(r'[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?').set_parse_action(lambda t: float(t[0]))
    infinity = pp.Regex(r"[+-]?inf(?![A-Za-z0-9_])").set_parse_action(lambda t: float(t[0]))
    param_bound = (pp.Optional(pp.Literal('-'), default='+') + name).set_parse_action(
        lambda t: ParamRef(t[1], -1 if t[0] == '-' else 1))
    bound = (signed_number | infinity | param_bound).set_name('interval bound')
    interval = (lbrack + bound + comma + bound + rbrack).set_parse_action(_interval)

    phi = pp.Forward().set_name('formula')
    finally_ = (pp.Keyword('F') + interval + lpar + phi + rpar).set_parse_action(_finally)
    globally = (pp.Keyword('G') + interval + lpar + phi + rpar).set_parse_action(_globally)
    truth = (pp.Keyword('true').set_parse_action(lambda: TRUE)
             | pp.Keyword('false').set_parse_action(lambda: FALSE))
    atom = finally_ | globally | truth | term
    until_op = pp.Group(pp.Keyword('U') + interval)
    phi <<= pp.infix_notation(atom, [
        (pp.Literal('!'), 1, pp.OpAssoc.RIGHT, _negation),
        (until_op, 2, pp.OpAssoc.LEFT, _until),
        (pp.Literal('&&'), 2, pp.OpAssoc.LEFT, _conjunction),
        (pp.Literal('||'), 2, pp.OpAssoc.LEFT, _disjunction),
        (pp.Literal('->'), 2, pp.OpAssoc.RIGHT, _implication),
    ])
    return phi


_GRAMMAR = _make_grammar()


# ------------------------------------------------------------------
#  Name resolution
# ------------------------------------------------------------------
class _Resolver:
    def __init__(self, signature, params):
        self.signature = set(signature)
        self.params = {spec.name: spec for spec in params}
        self.used = []
        self.roles = {}

    def _use(self, name):
        if name not in self.used:
            self.used.append(name)

    def expr(self, node):
        if isinstance(node, Var):
            if node.name in self.params:
                self._use(node.name)
                return Param(node.name)
            if node.name not in self.signature:
                raise FormulaError(f'undeclared signal variable {node.name!r}')
            return node
        if isinstance(node, (Neg, Abs)):
            return type(node)(self.expr(node.arg))
        if isinstance(node, BinOp):
            return BinOp(node.op, self.expr(node.left), self.expr(node.right))
        return node

    def bound(self, value, role):
        if not isinstance(value, ParamRef):
            return value
        if value.name not in self.params:
            raise FormulaError(f'interval bound {value.name!r} is not a declared parameter')
        previous = self.roles.setdefault(value.name, role)
        if previous != role:
            raise FormulaError(f'parameter {value.name!r} is used as both a lower and an upper '
                               'interval bound; its monotonicity would be ambiguous')
        self._use(value.name)
        return value

    def formula(self, node):
        if isinstance(node, Atomic):
            return Atomic(self.expr(node.expr))
        if isinstance(node, Not):
            return Not(self.formula(node.arg))
        if isinstance(node, And):
            return And(self.formula(node.left), self.formula(node.right))
        if isinstance(node, Until):
            lo, hi = node.interval.lo, node.interval.hi
            if isinstance(lo, ParamRef) and isinstance(hi, ParamRef) and lo.name == hi.name:
                raise FormulaError(f'parameter {lo.name!r} is used as both the lower and the upper '
                                   'bound of one interval; its monotonicity would be ambiguous')
            interval = Interval(self.bound(lo, 'lower'), self.bound(hi, 'upper'))
            return Until(interval, self.formula(node.left), self.formula(node.right))
        raise FormulaError(f'unexpected node {node!r}')


def parse_formula(text, signature, params=()):
    """Parse ``text`` into a desugared ParameterizedFormula.

    ``params`` holds ParamSpec objects or ``name:direction:lo:hi`` strings; every
    declared parameter must occur in the formula.
    """
    specs = tuple(p if isinstance(p, ParamSpec) else parse_param_decl(p) for p in params)
    names = [spec.name for spec in specs]
    if len(set(names)) != len(names):
        raise FormulaError(f'duplicate parameter names in {names!r}')
    clash = set(names) & set(signature)
    if clash:
        raise FormulaError(f'names declared both as signal and parameter: {sorted(clash)!r}')
    try:
        raw = _GRAMMAR.parse_string(text, parse_all=True)[0]
    except pp.ParseBaseException as exc:
        raise FormulaSyntaxError(exc.msg, exc.lineno, exc.col) from None
    resolver = _Resolver(signature, specs)
    formula = resolver.formula(raw)
    unused = [name for name in names if name not in resolver.used]
    if unused:
        raise FormulaError(f'declared parameter(s) not used in formula: {unused!r}')
    return ParameterizedFormula(formula, specs, tuple(signature), text=text)


# ------------------------------------------------------------------
#  Rendering
# ------------------------------------------------------------------
def _num_text(value):
    return repr(float(value))


def _expr_text(node):
    if isinstance(node, Num):
        return _num_text(node.value)
    if isinstance(node, (Var, Param)):
        return node.name
    if isinstance(node, Neg):
        return f'-({_expr_text(node.arg)})'
    if isinstance(node, Abs):
        return f'abs({_expr_text(node.arg)})'
    return f'({_expr_text(node.left)} {node.op} {_expr_text(node.right)})'


def _bound_text(value):
    if isinstance(value, ParamRef):
        return value.name if value.sign > 0 else f'-{value.name}'
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return _num_text(value)


def formula_to_text(node):
    """Concrete syntax for a formula; parsing it back yields an equal AST"""
    if isinstance(node, ParameterizedFormula):
        node = node.formula
    if node == TRUE:
        return 'true'
    if isinstance(node, Atomic):
        return f'{_expr_text(node.expr)} > 0'
    if isinstance(node, Not):
        return f'!({formula_to_text(node.arg)})'
    if isinstance(node, And):
        return f'({formula_to_text(node.left)}) && ({formula_to_text(node.right)})'
    interval = f'[{_bound_text(node.interval.lo)}, {_bound_text(node.interval.hi)}]'
    if node.left == TRUE:
        return f'F{interval}({formula_to_text(node.right)})'
    return f'({formula_to_text(node.left)}) U{interval} ({formula_to_text(node.right)})'


# ------------------------------------------------------------------
#  Instantiation and alternation
# ------------------------------------------------------------------
def _map_formula(node, on_expr, on_bound):
    if isinstance(node, Atomic):
        return Atomic(on_expr(node.expr))
    if isinstance(node, Not):
        return Not(_map_formula(node.arg, on_expr, on_bound))
    if isinstance(node, And):
        return And(_map_formula(node.left, on_expr, on_bound), _map_formula(node.right, on_expr, on_bound))
    interval = Interval(on_bound(node.interval.lo), on_bound(node.interval.hi))
    return Until(interval, _map_formula(node.left, on_expr, on_bound),
                 _map_formula(node.right, on_expr, on_bound))


def _map_expr(node, on_param):
    if isinstance(node, Param):
        return on_param(node)
    if isinstance(node, (Neg, Abs)):
        return type(node)(_map_expr(node.arg, on_param))
    if isinstance(node, BinOp):
        return BinOp(node.op, _map_expr(node.left, on_param), _map_expr(node.right, on_param))
    return node


def instantiate(pf, d):
    """Replace every parameter slot by its value in ``d`` (ordered as ``pf.params``)"""
    values = np.atleast_1d(np.asarray(d, dtype=float))
    if values.ndim != 1 or values.size != pf.dimension:
        raise FormulaError(f'expected {pf.dimension} parameter value(s), got {values.size}')
    lookup = dict(zip(pf.names, (float(v) for v in values)))

    def on_bound(value):
        if isinstance(value, ParamRef):
            return value.sign * lookup[value.name]
        return value

    def on_expr(node):
        return _map_expr(node, lambda p: Num(lookup[p.name]))

    return _map_formula(pf.formula, on_expr, on_bound)


def alternate(pf, signs):
    """Apply an alternation: negate every parameter whose sign is -1.

    ``instantiate(alternate(pf, signs), d) == instantiate(pf, signs * d)``; the
    negated parameters flip direction and bracket.
    """
    signs = tuple(int(s) for s in signs)
    if len(signs) != pf.dimension or any(s not in (1, -1) for s in signs):
        raise FormulaError(f'alternation must be {pf.dimension} signs of +1/-1, got {signs!r}')
    flipped = {spec.name for spec, s in zip(pf.params, signs) if s < 0}

    def on_bound(value):
        if isinstance(value, ParamRef) and value.name in flipped:
            return ParamRef(value.name, -value.sign)
        return value

    def on_expr(node):
        return _map_expr(node, lambda p: Neg(p) if p.name in flipped else p)

    params = tuple(
        replace(spec, direction=spec.direction.flipped(),
                lo=None if spec.hi is None else -spec.hi,
                hi=None if spec.lo is None else -spec.lo)
        if spec.name in flipped else spec
        for spec in pf.params)
    return ParameterizedFormula(_map_formula(pf.formula, on_expr, on_bound), params, pf.signature, text='')


# ------------------------------------------------------------------
#  Horizon
# ------------------------------------------------------------------
def formula_horizon(f):
    """Length of the trace prefix that decides satisfaction at time 0"""
    if isinstance(f, ParameterizedFormula):
        f = f.formula
    if isinstance(f, Atomic):
        return 0.0
    if isinstance(f, Not):
        return formula_horizon(f.arg)
    if isinstance(f, And):
        return max(formula_horizon(f.left), formula_horizon(f.right))
    lo, hi = f.interval.lo, f.interval.hi
    if isinstance(lo, ParamRef) or isinstance(hi, ParamRef):
        raise FormulaError('formula must be instantiated before its horizon is known')
    if math.isinf(lo) or math.isinf(hi):
        raise FormulaError('unbounded-time formula not supported')
    return max(0.0, hi + max(formula_horizon(f.left), formula_horizon(f.right)))


# ------------------------------------------------------------------
#  Monitor
# ------------------------------------------------------------------
def _eval_expr(node, trace):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return trace.column(node.name)
    if isinstance(node, Param):
        raise FormulaError(f'parameter {node.name!r} must be instantiated before monitoring')
    if isinstance(node, Neg):
        return -_eval_expr(node.arg, trace)
    if isinstance(node, Abs):
        return np.abs(_eval_expr(node.arg, trace))
    left, right = _eval_expr(node.left, trace), _eval_expr(node.right, trace)
    if node.op == '+':
        return left + right
    if node.op == '-':
        return left - right
    return left * right


def _merge_points(points, eps):
    points = np.sort(np.asarray(points, dtype=float))
    points = points[points >= -eps]
    if points.size == 0 or points[0] > eps:
        points = np.concatenate(([0.0], points))
    points[0] = 0.0
    keep = np.concatenate(([True], np.diff(points) > eps))
    return points[keep]


def _representatives(points):
    """One time per atom: each breakpoint, then the midpoint of the cell after it"""
    ends = np.append(points[1:], points[-1] + 2.0)
    reps = np.empty(2 * points.size)
    reps[0::2] = points
    reps[1::2] = 0.5 * (points + ends)
    return reps


class BoolSignal:
    """Exact piecewise-constant boolean signal over ``[0, inf)``.

    Atom ``2i`` is the breakpoint ``points[i]``; atom ``2i + 1`` is the open cell
    between ``points[i]`` and ``points[i + 1]`` (the last cell is unbounded).
    """

    __slots__ = ('points', 'values', 'eps')

    def __init__(self, points, values, eps):
        self.points = points
        self.values = values
        self.eps = eps

    @classmethod
    def constant(cls, value, eps):
        return cls(np.zeros(1), np.full(2, bool(value)), eps)

    def atoms(self, times):
        times = np.asarray(times, dtype=float)
        i = np.searchsorted(self.points, times + self.eps, side='right') - 1
        i = np.clip(i, 0, self.points.size - 1)
        on_point = np.abs(times - self.points[i]) <= self.eps
        return np.where(on_point, 2 * i, 2 * i + 1)

    def value_at(self, t):
        return bool(self.values[self.atoms(np.array([t]))[0]])

    def resample(self, points):
        return self.values[self.atoms(_representatives(points))]

    def simplified(self):
        if self.points.size == 1:
            return self
        v = self.values
        redundant = (v[2:-1:2] == v[1:-2:2]) & (v[2:-1:2] == v[3::2])
        keep = np.concatenate(([True], ~redundant))
        kept = np.repeat(keep, 2)
        return BoolSignal(self.points[keep], v[kept], self.eps)

    def true_intervals(self, end=None):
        """Maximal runs where the signal holds, as ``(start, stop)`` pairs"""
        stop = math.inf if end is None else float(end)
        runs = []
        start = None
        for i, t in enumerate(self.points):
            if self.values[2 * i] and start is None:
                start = float(t)
            if not self.values[2 * i] and start is not None:
                runs.append((start, float(t)))
                start = None
            if self.values[2 * i + 1] and start is None:
                start = float(t)
            if not self.values[2 * i + 1] and start is not None:
                runs.append((start, float(t)))
                start = None
        if start is not None:
            runs.append((start, stop))
        return runs


def _until_signal(interval, left, right, eps):
    a, b = interval.lo, interval.hi
    if b < a or a < 0 or b < 0:
        return BoolSignal.constant(False, eps)
    points = _merge_points(np.concatenate((left.points, right.points)), eps)
    v1 = left.resample(points)
    v2 = right.resample(points)
    support = BoolSignal(points, v1, eps)

    out_points = _merge_points(np.concatenate((points, points - a, points - b)), eps)
    reps = _representatives(out_points)
    j = support.atoms(reps)

    # end of the left-operand run that starts at each representative
    false_atoms = np.flatnonzero(~v1)
    nxt = np.searchsorted(false_atoms, j, side='right')
    has_end = nxt < false_atoms.size
    run_end = np.full(reps.shape, math.inf)
    run_end[has_end] = points[false_atoms[nxt[has_end]] // 2]
    run_end = np.where(v1[j], run_end, reps)

    lower = reps + a
    upper = np.minimum(reps + b, run_end)
    feasible = lower <= upper + eps
    upper = np.maximum(upper, lower)
    jl = support.atoms(lower)
    ju = support.atoms(upper)
    counts = np.concatenate(([0], np.cumsum(v2)))
    hit = counts[np.maximum(jl, ju) + 1] - counts[np.minimum(jl, ju)] > 0
    return BoolSignal(out_points, feasible & hit, eps).simplified()


def satisfaction_signal(f, trace):
    """Satisfaction of an instantiated formula at every time of the trace domain"""
    eps = get_config().TIME_EPS
    if isinstance(f, ParameterizedFormula):
        if f.dimension:
            raise FormulaError('formula must be instantiated before monitoring')
        f = f.formula
    if isinstance(f, Atomic):
        value = _eval_expr(f.expr, trace)
        rows = np.broadcast_to(np.asarray(value, dtype=float) > 0, (len(trace),))
        return BoolSignal(trace.timestamps, np.repeat(rows, 2), eps).simplified()
    if isinstance(f, Not):
        inner = satisfaction_signal(f.arg, trace)
        return BoolSignal(inner.points, ~inner.values, eps)
    if isinstance(f, And):
        left = satisfaction_signal(f.left, trace)
        right = satisfaction_signal(f.right, trace)
        points = _merge_points(np.concatenate((left.points, right.points)), eps)
        return BoolSignal(points, left.resample(points) & right.resample(points), eps).simplified()
    if isinstance(f, Until):
        if isinstance(f.interval.lo, ParamRef) or isinstance(f.interval.hi, ParamRef):
            raise FormulaError('formula must be instantiated before monitoring')
        return _until_signal(f.interval, satisfaction_signal(f.left, trace),
                             satisfaction_signal(f.right, trace), eps)
    raise FormulaError(f'unexpected node {f!r}')


def evaluate(f, trace, t0=0.0):
    """Decide ``trace^(t0) |= f`` for an instantiated formula"""
    horizon = formula_horizon(f)
    eps = get_config().TIME_EPS
    if t0 < -eps or t0 + horizon > trace.end_time + eps:
        raise TraceTooShortError(
            f'trace {trace.id or "?"} ends at {trace.end_time!r}, formula needs [{t0!r}, {t0 + horizon!r}]')
    return satisfaction_signal(f, trace).value_at(t0)


# ------------------------------------------------------------------
#  Critical parameter values
# ------------------------------------------------------------------
def _fixed_values(pf, others):
    if others is None:
        return [0.5 * sum(spec.require_bracket()) for spec in pf.params]
    values = [float(v) for v in others]
    if len(values) != pf.dimension:
        raise FormulaError(f'expected {pf.dimension} parameter value(s), got {len(values)}')
    return values


def critical_parameter(pf, trace, i, tol=None, others=None):
    """Boundary of the satisfaction half-line of parameter ``i`` on one trace.

    For an increasing parameter the trace satisfies the formula above the
    returned value and violates it below; ``-inf`` means satisfied on the whole
    bracket, ``+inf`` never satisfied in it. Decreasing parameters mirror this.
    ``others`` fixes the remaining parameters (bracket midpoints by default).
    """
    if pf.dimension < 1:
        raise FormulaError('formula has no parameters')
    tol = get_config().DEFAULT_TOL if tol is None else tol
    if tol <= 0:
        raise FormulaError(f'tolerance must be positive, got {tol!r}')
    spec = pf.params[i]
    lo, hi = spec.require_bracket()
    values = _fixed_values(pf, others)

    def satisfied(v):
        values[i] = v
        return evaluate(instantiate(pf, values), trace, 0.0)

    sat_lo, sat_hi = satisfied(lo), satisfied(hi)
    increasing = spec.direction is Monotonicity.INCREASING
    if increasing and sat_lo and not sat_hi or not increasing and sat_hi and not sat_lo:
        raise MonotonicityError(
            f'trace {trace.id or "?"}: parameter {spec.name!r} declared {spec.direction.value} '
            f'but satisfaction is {sat_lo} at {lo!r} and {sat_hi} at {hi!r}',
            trace_id=trace.id, parameter=spec.name)
    if increasing:
        if sat_lo:
            return -math.inf
        if not sat_hi:
            return math.inf
    else:
        if sat_hi:
            return math.inf
        if not sat_lo:
            return -math.inf
    # satisfied at one end, violated at the other
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if satisfied(mid) == increasing:
            hi = mid
        else:
            lo = mid
    return hi if increasing else lo


@dataclass
class MonotonicityFinding:
    trace_id: str
    parameter: str
    switch_points: list
    reason: str


@dataclass
class MonotonicityReport:
    checked: int = 0
    findings: list = field(default_factory=list)

    @property
    def monotone(self):
        return not self.findings

    def __str__(self):
        lines = [f'checked: {self.checked} (trace, parameter) pair(s)',
                 f'monotone: {"yes" if self.monotone else "no"}']
        for finding in self.findings:
            points = ', '.join(f'{p:.6g}' for p in finding.switch_points)
            lines.append(f'  trace {finding.trace_id} parameter {finding.parameter}: '
                         f'{finding.reason} (switches near {points})')
        return '\n'.join(lines)


def check_monotonicity(pf, traces, grid=None):
    """Scan each parameter's bracket on every trace and report satisfaction
    patterns that switch more than once or in the wrong direction."""
    grid = get_config().MONOTONICITY_GRID if grid is None else int(grid)
    if grid < 2:
        raise FormulaError(f'grid must be at least 2, got {grid}')
    report = MonotonicityReport()
    for index, trace in enumerate(traces):
        trace_id = trace.id if trace.id is not None else str(index)
        for i, spec in enumerate(pf.params):
            lo, hi = spec.require_bracket()
            values = _fixed_values(pf, None)
            grid_values = np.linspace(lo, hi, grid)
            pattern = []
            for v in grid_values:
                values[i] = float(v)
                pattern.append(evaluate(instantiate(pf, values), trace, 0.0))
            report.checked += 1
            switches = [k for k in range(1, grid) if pattern[k] != pattern[k - 1]]
            points = [0.5 * (grid_values[k - 1] + grid_values[k]) for k in switches]
            if len(switches) > 1:
                report.findings.append(MonotonicityFinding(
                    trace_id, spec.name, points, f'{len(switches)} satisfaction switches'))
            elif switches:
                rising = pattern[switches[0]]
                if rising != (spec.direction is Monotonicity.INCREASING):
                    report.findings.append(MonotonicityFinding(
                        trace_id, spec.name, points,
                        f'switches {"false->true" if rising else "true->false"} '
                        f'against declared {spec.direction.value}'))
    logger.debug('monotonicity check: %d pair(s), %d finding(s)', report.checked, len(report.findings))
    return report
