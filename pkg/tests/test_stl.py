import math

import numpy as np
import pytest

from conftest import make_trace
from stl import (FALSE, TRUE, Abs, And, Atomic, BinOp, Finally, FormulaError, FormulaSyntaxError,
                 Globally, Interval, MonotonicityError, Monotonicity, Not, Num, Param, ParamRef,
                 ParamSpec, TraceTooShortError, Until, Var, alternate, check_monotonicity,
                 critical_parameter, evaluate, formula_horizon, formula_to_text, instantiate,
                 parse_formula, parse_param_decl, satisfaction_signal)
from traces import Trace


def closed(text, signature=('x', 'y')):
    return parse_formula(text, signature).formula


# ------------------------------------------------------------------
#  Parsing
# ------------------------------------------------------------------
def test_parse_settling_template():
    pf = parse_formula('F[0.22, tau](abs(e) < 0.05)', ['e'], ['tau:increasing:0:5'])
    expected = Finally(Interval(0.22, ParamRef('tau')), Atomic(BinOp('-', Num(0.05), Abs(Var('e')))))
    assert pf.formula == expected
    assert pf.names == ('tau',)
    assert pf.params[0].direction is Monotonicity.INCREASING


def test_parse_threshold_parameter():
    pf = parse_formula('G[0.5, 2](abs(v) < gamma)', ['x', 'v'], ['gamma:increasing:0:20'])
    assert pf.formula == Globally(Interval(0.5, 2.0), Atomic(BinOp('-', Param('gamma'), Abs(Var('v')))))


def test_comparison_against_zero_is_not_wrapped():
    assert closed('x > 0') == Atomic(Var('x'))
    assert closed('0 < x') == Atomic(Var('x'))


def test_precedence():
    a, b, c = Atomic(Var('x')), Atomic(Var('y')), Atomic(BinOp('-', Var('x'), Var('y')))
    assert closed('x > 0 && y > 0 || x - y > 0') == Not(And(Not(And(a, b)), Not(c)))
    assert closed('!x > 0 && y > 0') == And(Not(a), b)
    assert closed('x > 0 U[0, 1] y > 0 && y > 0') == And(Until(Interval(0.0, 1.0), a, b), b)


def test_implication_is_right_associative():
    a, b = Atomic(Var('x')), Atomic(Var('y'))
    assert closed('x > 0 -> y > 0 -> x > 0') == Not(And(a, Not(Not(And(b, Not(a))))))


def test_negative_numbers_and_minus():
    assert closed('x > -1') == Atomic(BinOp('-', Var('x'), Num(-1.0)))
    assert closed('x - 2 * y >= 1') == Atomic(BinOp('-', BinOp('-', Var('x'), BinOp('*', Num(2.0), Var('y'))),
                                                    Num(1.0)))


def test_truth_constants():
    assert closed('true') == TRUE
    assert closed('false') == FALSE


def test_syntax_error_position():
    with pytest.raises(FormulaSyntaxError) as excinfo:
        parse_formula('F[0, 1](x > )', ['x'])
    assert excinfo.value.line == 1
    assert excinfo.value.col >= 1


def test_undeclared_signal():
    with pytest.raises(FormulaError, match='undeclared'):
        parse_formula('F[0, 1](z > 0)', ['x'])


@pytest.mark.parametrize('text', ['F[tau, tau](x > 0)', 'F[tau, 2](x > 0) && F[0, tau](x > 0)'])
def test_parameter_as_both_bounds(text):
    with pytest.raises(FormulaError, match='both'):
        parse_formula(text, ['x'], ['tau:increasing:0:1'])


def test_unused_parameter():
    with pytest.raises(FormulaError, match='not used'):
        parse_formula('F[0, 1](x > 0)', ['x'], ['tau:increasing:0:1'])


def test_reserved_words_cannot_be_signals():
    with pytest.raises(FormulaError):
        parse_formula('F > 0', ['F'])


def test_parse_param_decl():
    spec = parse_param_decl('gamma:dec:0:2')
    assert spec == ParamSpec('gamma', Monotonicity.DECREASING, 0.0, 2.0)
    with pytest.raises(FormulaError):
        parse_param_decl('gamma:sideways:0:1')
    with pytest.raises(FormulaError):
        parse_param_decl('gamma:inc:3:1')


@pytest.mark.parametrize('text', [
    'F[0.22, 5](abs(e) < 0.05)',
    'G[0.5, 2](abs(x) < 0.8) || !(x > 0 U[0, 1] y > 0)',
    '(x + y > 2 && true) -> F[0, inf](y <= -0.5)',
    'x > 0 U[1, 0] y > 0',
])
def test_text_round_trip(text):
    f = closed(text, ('x', 'y', 'e'))
    assert closed(formula_to_text(f), ('x', 'y', 'e')) == f


# ------------------------------------------------------------------
#  Horizon and instantiation
# ------------------------------------------------------------------
def test_horizon():
    assert formula_horizon(closed('x > 0')) == 0.0
    assert formula_horizon(closed('F[0, 1](G[0, 1.5](x > 0))')) == pytest.approx(2.5)
    assert formula_horizon(closed('x > 0 U[0, 2] y > 0')) == 2.0
    assert formula_horizon(closed('F[3, 1](x > 0)')) == 1.0


def test_unbounded_horizon():
    with pytest.raises(FormulaError, match='unbounded'):
        formula_horizon(closed('F[0, inf](x > 0)'))


def test_instantiate():
    pf = parse_formula('F[0, tau](x < gamma)', ['x'], ['tau:inc:0:4', 'gamma:inc:0:2'])
    f = instantiate(pf, [1.5, 0.3])
    assert f == Finally(Interval(0.0, 1.5), Atomic(BinOp('-', Num(0.3), Var('x'))))
    with pytest.raises(FormulaError):
        instantiate(pf, [1.0])


def test_parameterized_formula_needs_instantiation(ramp):
    pf = parse_formula('F[0, tau](x > 1)', ['x'], ['tau:inc:0:2'])
    with pytest.raises(FormulaError):
        formula_horizon(pf)
    with pytest.raises(FormulaError):
        satisfaction_signal(pf, ramp)


# ------------------------------------------------------------------
#  Monitoring
# ------------------------------------------------------------------
def test_ramp_examples(ramp):
    shifted = make_trace(x=lambda t: t - 0.5)
    assert evaluate(closed('F[0, 1](x > 0)', ('x',)), shifted)
    assert not evaluate(closed('G[0, 1](x > 0)', ('x',)), shifted)
    assert evaluate(closed('G[0, 2](x > -1)', ('x',)), ramp)
    assert evaluate(closed('x > 1', ('x',)), ramp, t0=1.5)


def test_inverted_or_negative_interval_is_false(ramp):
    assert not evaluate(closed('x > -1 U[1, 0] x > -1', ('x',)), ramp)
    assert not evaluate(closed('x > -1 U[-1, 1] x > -1', ('x',)), ramp)


def test_until_needs_left_operand_from_time_zero():
    # x only becomes positive at 0.5; y from 2 on
    trace = Trace(('x', 'y'), [0.0, 0.5, 2.0, 3.0], [[0, 0], [1, 0], [1, 1], [1, 1]])
    assert not evaluate(closed('x > 0 U[1, 3] y > 0'), trace)
    assert evaluate(closed('F[1, 3](y > 0)'), trace)


def test_until_left_operand_may_fail_at_the_witness():
    trace = Trace(('x', 'y'), [0.0, 1.0, 2.0, 3.0], [[1, 0], [1, 0], [0, 1], [0, 1]])
    assert evaluate(closed('x > 0 U[0, 3] y > 0'), trace)
    assert not evaluate(closed('x > 0 U[0, 1.5] y > 0'), trace)


def test_short_trace(ramp):
    with pytest.raises(TraceTooShortError):
        evaluate(closed('F[0, 3](x > 0)', ('x',)), ramp)
    with pytest.raises(TraceTooShortError):
        evaluate(closed('F[0, 1](x > 0)', ('x',)), ramp, t0=1.5)


def test_true_intervals(ramp):
    signal = satisfaction_signal(closed('x > 1', ('x',)), ramp)
    ((start, stop),) = signal.true_intervals(end=ramp.end_time)
    assert start == pytest.approx(1.01)
    assert stop == pytest.approx(2.0)


STEP = 0.5
FINE = 0.05


def random_formula(rng, depth, grid=STEP):
    """Random formula over x, y; interval endpoints are multiples of ``grid`` in [0, 1.5]"""
    if depth == 0 or rng.random() < 0.25:
        kind = rng.integers(3)
        threshold = float(rng.choice([-0.25, 0.25, 0.75, 1.25]))
        if kind == 0:
            return Atomic(BinOp('-', Var('x'), Num(threshold)))
        if kind == 1:
            return Atomic(BinOp('-', Num(threshold), Var('y')))
        return Atomic(BinOp('-', BinOp('+', Var('x'), Var('y')), Num(threshold)))
    op = rng.integers(4)
    if op == 0:
        return Not(random_formula(rng, depth - 1, grid))
    if op == 1:
        return And(random_formula(rng, depth - 1, grid), random_formula(rng, depth - 1, grid))
    span = int(round(1.5 / grid))
    lo, hi = (float(v) * grid for v in rng.integers(0, span + 1, size=2))
    left = TRUE if op == 2 else random_formula(rng, depth - 1, grid)
    return Until(Interval(lo, hi), left, random_formula(rng, depth - 1, grid))


def brute_force(f, trace, cells, grid=STEP):
    """Satisfaction on every grid atom by direct quantification.

    Atom ``2k`` is the time ``k * grid``, atom ``2k + 1`` the open cell after
    it. Samples sit on multiples of STEP, which ``grid`` divides, so every
    signal is constant on each cell.
    """
    ratio = int(round(STEP / grid))
    atoms = 2 * cells + 1
    rows = np.minimum(np.arange(atoms) // 2 // ratio, len(trace) - 1)
    if isinstance(f, Atomic):
        def value(node):
            if isinstance(node, Num):
                return np.full(atoms, node.value)
            if isinstance(node, Var):
                return trace.column(node.name)[rows]
            left, right = value(node.left), value(node.right)
            return left + right if node.op == '+' else left - right
        return value(f.expr) > 0
    if isinstance(f, Not):
        return ~brute_force(f.arg, trace, cells, grid)
    if isinstance(f, And):
        return brute_force(f.left, trace, cells, grid) & brute_force(f.right, trace, cells, grid)
    left, right = brute_force(f.left, trace, cells, grid), brute_force(f.right, trace, cells, grid)
    a, b = (int(round(v / grid)) for v in (f.interval.lo, f.interval.hi))
    out = np.zeros(atoms, dtype=bool)
    if b < a:
        return out
    for s in range(atoms - 2 * b):
        for q in range(s + 2 * a, s + 2 * b + 1):
            # a witness inside a cell needs the left operand on part of that cell
            stop = q + 1 if q % 2 and q > s else q
            if right[q] and left[s:stop].all():
                out[s] = True
                break
    return out


def random_trace(rng, horizon):
    steps = int(round(horizon / STEP)) + 2
    trace = Trace(('x', 'y'), np.arange(steps + 1) * STEP,
                  rng.choice([-0.5, 0.0, 0.5, 1.0], size=(steps + 1, 2)))
    return trace, steps


def test_monitor_matches_brute_force_quantification():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(150):
        f = random_formula(rng, 4)
        trace, steps = random_trace(rng, formula_horizon(f))
        expected = brute_force(f, trace, steps)[0]
        assert evaluate(f, trace) == expected, formula_to_text(f)
        checked += 1
    assert checked >= 100


def test_monitor_matches_brute_force_with_endpoints_between_samples():
    # interval endpoints on a grid ten times finer than the samples
    rng = np.random.default_rng(5150)
    ratio = int(round(STEP / FINE))
    checked = 0
    for _ in range(150):
        f = random_formula(rng, 4, grid=FINE)
        trace, steps = random_trace(rng, formula_horizon(f))
        whole = brute_force(f, trace, steps * ratio, grid=FINE)
        assert evaluate(f, trace) == whole[0], formula_to_text(f)
        # later sample instants too
        for k in range(steps - int(formula_horizon(f) / STEP) - 1):
            assert evaluate(f, trace, k * STEP) == whole[2 * k * ratio], formula_to_text(f)
        checked += 1
    assert checked >= 100


def test_derived_operators_agree_with_their_definitions():
    rng = np.random.default_rng(7)
    for _ in range(40):
        trace = Trace(('x', 'y'), np.arange(9) * STEP, rng.choice([-1.0, 1.0], size=(9, 2)))
        phi = Atomic(Var('x'))
        interval = Interval(0.5, 1.5)
        assert evaluate(Finally(interval, phi), trace) == evaluate(Until(interval, TRUE, phi), trace)
        assert evaluate(Globally(interval, phi), trace) == (not evaluate(Finally(interval, Not(phi)), trace))
        grid = np.arange(1, 4) * STEP
        assert evaluate(Finally(interval, phi), trace) == any(trace.sample_at(t)[0] > 0 for t in grid)


# ------------------------------------------------------------------
#  Critical parameter values
# ------------------------------------------------------------------
def test_critical_hitting_time(ramp):
    pf = parse_formula('F[0, tau](x > 1)', ['x'], ['tau:increasing:0:2'])
    value = critical_parameter(pf, ramp, 0, tol=1e-6)
    assert value == pytest.approx(1.0, abs=0.011)
    assert evaluate(instantiate(pf, [value + 2e-6]), ramp)
    assert not evaluate(instantiate(pf, [value - 2e-6]), ramp)


def test_critical_max_deviation():
    trace = make_trace(x=lambda t: 0.8 * np.sin(np.pi * t))
    pf = parse_formula('G[0, 2](abs(x) < gamma)', ['x'], ['gamma:increasing:0:5'])
    assert critical_parameter(pf, trace, 0, tol=1e-6) == pytest.approx(0.8, abs=2e-6)


def test_critical_never_satisfied():
    trace = make_trace(x=lambda t: 0.0 * t)
    pf = parse_formula('F[0, tau](x > 1)', ['x'], ['tau:increasing:0:2'])
    assert critical_parameter(pf, trace, 0) == math.inf


def test_critical_always_satisfied():
    trace = make_trace(x=lambda t: 2.0 + 0.0 * t)
    pf = parse_formula('F[0, tau](x > 1)', ['x'], ['tau:increasing:0:2'])
    assert critical_parameter(pf, trace, 0) == -math.inf


def test_critical_decreasing_parameter(ramp):
    pf = parse_formula('F[0, 1](x > gamma)', ['x'], ['gamma:decreasing:0:3'])
    # satisfied exactly for gamma < max x on [0, 1] = 1.0
    assert critical_parameter(pf, ramp, 0, tol=1e-6) == pytest.approx(1.0, abs=2e-6)


def test_declared_direction_is_checked(ramp):
    pf = parse_formula('F[0, tau](x > 1)', ['x'], ['tau:decreasing:0:2'])
    with pytest.raises(MonotonicityError) as excinfo:
        critical_parameter(pf, ramp.with_id('r1'), 0)
    assert excinfo.value.trace_id == 'r1'
    assert excinfo.value.parameter == 'tau'


def test_alternation_negates_parameters(ramp):
    pf = parse_formula('F[0, tau](x > gamma)', ['x'], ['tau:increasing:0:2', 'gamma:decreasing:0:2'])
    alt = alternate(pf, (-1, 1))
    assert alt.params[0] == ParamSpec('tau', Monotonicity.DECREASING, -2.0, 0.0)
    assert alt.params[1] == pf.params[1]
    for d in ([0.5, 0.3], [1.2, 0.9], [2.0, 1.5]):
        flipped = [-d[0], d[1]]
        assert instantiate(alt, flipped) == instantiate(pf, d)
    alt_gamma = alternate(pf, (1, -1))
    for d in ([0.5, 0.3], [1.5, 1.2]):
        assert evaluate(instantiate(alt_gamma, [d[0], -d[1]]), ramp) == evaluate(instantiate(pf, d), ramp)


def test_alternated_critical_value_is_negated(ramp):
    pf = parse_formula('F[0, tau](x > 1)', ['x'], ['tau:increasing:0:2'])
    alt = alternate(pf, (-1,))
    assert critical_parameter(alt, ramp, 0, tol=1e-6) == pytest.approx(
        -critical_parameter(pf, ramp, 0, tol=1e-6), abs=2e-6)


# ------------------------------------------------------------------
#  Monotonicity diagnostic
# ------------------------------------------------------------------
def test_monotone_template_passes(ramp):
    pf = parse_formula('F[0, tau](x > 1)', ['x'], ['tau:increasing:0:2'])
    report = check_monotonicity(pf, [ramp, make_trace(x=lambda t: 2 * t)], grid=10)
    assert report.checked == 2
    assert report.monotone
    assert 'monotone: yes' in str(report)


def test_band_template_is_not_monotone():
    trace = make_trace(x=lambda t: 1.0 + 0.0 * t, id='flat')
    pf = parse_formula('G[0, 1](abs(x - gamma) < 0.1)', ['x'], ['gamma:increasing:0:3'])
    report = check_monotonicity(pf, [trace], grid=31)
    assert not report.monotone
    (finding,) = report.findings
    assert finding.trace_id == 'flat'
    assert len(finding.switch_points) == 2
    assert 'monotone: no' in str(report)


def test_wrong_direction_is_reported(ramp):
    pf = parse_formula('F[0, tau](x > 1)', ['x'], ['tau:decreasing:0:2'])
    report = check_monotonicity(pf, [ramp], grid=10)
    assert 'against declared decreasing' in report.findings[0].reason


def test_no_traces():
    pf = parse_formula('F[0, tau](x > 1)', ['x'], ['tau:increasing:0:2'])
    report = check_monotonicity(pf, [])
    assert report.checked == 0 and report.monotone
