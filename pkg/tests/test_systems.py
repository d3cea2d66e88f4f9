import math

import numpy as np
import pytest

from stl import critical_parameter, parse_formula
from stats import Ecdf
from systems import (NO_INPUT, BouncingBall, BouncingBallParams, HittingModel, HittingModelParams,
                     InputSignal, ReplaySystem, SecondOrder, SecondOrderParams, SimulationError,
                     TracePoolExhausted, ballistic_arcs, build_system, draw_gravity, load_input,
                     rk4_matrices, sample_path, simulate_bouncing_ball, time_grid, trace_replay_system)
from traces import Trace
from utils import path_rng


def test_time_grid():
    grid = time_grid(1.0, 0.25)
    assert list(grid) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert time_grid(5.0, 0.01).size == 501
    with pytest.raises(SimulationError):
        time_grid(0.0, 0.1)


# ------------------------------------------------------------------
#  Bouncing ball
# ------------------------------------------------------------------
def test_first_contact_time():
    trace = simulate_bouncing_ball(BouncingBallParams(), seed=1, horizon=2.0, step=0.01)
    contact = math.sqrt(2.0 / 9.8)
    assert contact == pytest.approx(0.4518, abs=1e-4)
    index = int(np.argmin(np.abs(trace.timestamps - contact)))
    assert trace.timestamps[index] == pytest.approx(contact, abs=1e-12)
    row = trace.values[index]
    assert row[0] == pytest.approx(0.0, abs=1e-9)
    # the contact row already carries the rebound
    assert row[1] == pytest.approx(math.sqrt(2 * 9.8), rel=1e-9)


def test_elastic_apex_is_preserved():
    starts, speeds = ballistic_arcs(1.0, 9.8, 1.0, 10.0)
    assert len(starts) > 5
    assert np.allclose(speeds ** 2 / (2 * 9.8), 1.0, atol=1e-9)


def test_restitution_scales_apex():
    _, speeds = ballistic_arcs(1.0, 9.8, 0.5, 10.0)
    assert speeds[1] ** 2 / (2 * 9.8) == pytest.approx(0.25, rel=1e-9)


def test_ball_comes_to_rest():
    trace = simulate_bouncing_ball(BouncingBallParams(restitution=0.1), seed=0, horizon=3.0, step=0.01)
    assert trace.sample_at(3.0)[0] == 0.0
    assert trace.sample_at(3.0)[1] == 0.0


def test_height_never_negative():
    trace = simulate_bouncing_ball(BouncingBallParams(sigma=1.0, restitution=0.8), seed=9, horizon=4.0)
    assert trace.column('x').min() >= 0.0


def test_mean_gravity():
    params = BouncingBallParams(sigma=0.5)
    draws = [draw_gravity(params, path_rng((seed,))) for seed in range(1000)]
    assert np.mean(draws) == pytest.approx(9.8, abs=0.05)


class _AlwaysNegative:
    def standard_normal(self):
        return -5.0


def test_gravity_redraw_gives_up():
    with pytest.raises(SimulationError, match='no positive gravity'):
        draw_gravity(BouncingBallParams(g0=1.0, sigma=1.0), _AlwaysNegative())


@pytest.mark.parametrize('kwargs', [{'x0': 0.0}, {'g0': -1.0}, {'restitution': 1.5}, {'sigma': -0.1}])
def test_bouncing_ball_param_validation(kwargs):
    with pytest.raises(SimulationError):
        BouncingBallParams(**kwargs)


# ------------------------------------------------------------------
#  Hitting model
# ------------------------------------------------------------------
def test_hitting_trace_shape():
    system = HittingModel(HittingModelParams(a=0.0, b=1.0))
    trace = system.sample_path(NO_INPUT, 3, 5.0, 0.01)
    event = system.event_time(3, 5.0)
    assert np.any(np.abs(trace.timestamps - event) < 1e-12)
    assert trace.sample_at(max(event - 1e-6, 0.0))[0] == 1.0
    assert trace.sample_at(event)[0] == 0.0


def test_hitting_time_is_recovered_by_the_template():
    system = HittingModel(HittingModelParams(a=2.0, b=3.0))
    pf = parse_formula('F[0, tau](x < 0.5)', ['x'], ['tau:increasing:0:5'])
    for seed in range(5):
        trace = system.sample_path(NO_INPUT, seed, 5.0, 0.01)
        assert critical_parameter(pf, trace, 0, tol=1e-7) == pytest.approx(system.event_time(seed, 5.0), abs=1e-6)


def test_normal_cdf():
    params = HittingModelParams(distribution='normal', mu=1.0, sd=0.5)
    assert params.cdf(1.0) == pytest.approx(0.5)
    assert params.cdf(2.0) == pytest.approx(0.97725, abs=1e-4)


@pytest.mark.slow
def test_hitting_ecdf_converges_to_cdf():
    params = HittingModelParams(distribution='normal', mu=2.0, sd=0.4)
    system = HittingModel(params)
    pf = parse_formula('F[0, tau](x < 0.5)', ['x'], ['tau:increasing:0:5'])
    values = [critical_parameter(pf, system.sample_path(NO_INPUT, (5, 1, i), 5.0, 0.01), 0, tol=1e-4)
              for i in range(2000)]
    grid = np.linspace(0.5, 3.5, 61)
    ecdf = Ecdf(values).evaluate(grid)
    assert np.max(np.abs(ecdf - params.cdf(grid))) < 0.05


@pytest.mark.parametrize('kwargs', [{'distribution': 'poisson'}, {'a': 1.0, 'b': 1.0}, {'distribution': 'normal', 'sd': 0.0}])
def test_hitting_param_validation(kwargs):
    with pytest.raises(SimulationError):
        HittingModelParams(**kwargs)


# ------------------------------------------------------------------
#  Second-order plant
# ------------------------------------------------------------------
def test_rk4_matches_matrix_exponential_for_decay():
    a = np.array([[-1.0]])
    m, _ = rk4_matrices(a, np.array([0.0]), 0.1)
    assert m[0, 0] == pytest.approx(math.exp(-0.1), abs=1e-7)


def test_step_response_settles():
    system = SecondOrder(SecondOrderParams(wn=2.0, zeta=0.7))
    trace = system.sample_path(NO_INPUT, 0, 8.0, 0.01)
    assert trace.variables == ('u', 'y', 'e')
    assert trace.column('y')[-1] == pytest.approx(1.0, abs=1e-3)
    # 5 % settling of an underdamped loop is roughly 3 / (zeta * wn)
    assert 1.0 < system.settling_time(trace) < 3.0 / (0.7 * 2.0)


def test_settling_time_scales_with_natural_frequency():
    slow = SecondOrder(SecondOrderParams(wn=1.0))
    fast = SecondOrder(SecondOrderParams(wn=2.0))
    t_slow = slow.settling_time(slow.sample_path(NO_INPUT, 0, 10.0, 0.001))
    t_fast = fast.settling_time(fast.sample_path(NO_INPUT, 0, 10.0, 0.001))
    assert t_slow == pytest.approx(2 * t_fast, abs=0.005)


def test_second_order_follows_tabulated_input():
    table = InputSignal(times=[0.0, 4.0], table={'u': [1.0, 0.0]})
    system = SecondOrder(SecondOrderParams(wn=3.0))
    trace = system.sample_path(table, 0, 10.0, 0.01)
    assert trace.sample_at(3.9)[0] == 1.0
    assert trace.sample_at(10.0)[1] == pytest.approx(0.0, abs=1e-2)


def test_never_settles_inside_horizon():
    system = SecondOrder(SecondOrderParams(wn=0.2, zeta=0.1))
    assert system.settling_time(system.sample_path(NO_INPUT, 0, 2.0, 0.01)) == math.inf


# ------------------------------------------------------------------
#  Determinism
# ------------------------------------------------------------------
@pytest.mark.parametrize('system', [
    BouncingBall(BouncingBallParams(sigma=0.5, restitution=0.9)),
    HittingModel(HittingModelParams(distribution='normal', mu=1.0, sd=0.3)),
    SecondOrder(SecondOrderParams(wn=1.5, wn_spread=1.0, noise_sd=0.1, y0_sd=0.1)),
])
def test_same_seed_same_trace(system):
    first = sample_path(system, NO_INPUT, (42, 1, 7), 3.0, 0.01)
    second = sample_path(system, NO_INPUT, (42, 1, 7), 3.0, 0.01)
    other = sample_path(system, NO_INPUT, (42, 1, 8), 3.0, 0.01)
    assert np.array_equal(first.timestamps, second.timestamps)
    assert np.array_equal(first.values, second.values)
    assert not (first.values.shape == other.values.shape and np.array_equal(first.values, other.values))


# ------------------------------------------------------------------
#  Replay
# ------------------------------------------------------------------
def recorded(count):
    return [Trace(('x',), [0.0, 1.0], [float(i), 0.0], id=f'r{i}') for i in range(count)]


def test_replay_draws_without_replacement():
    system = ReplaySystem(recorded(19))
    ids = [system.sample_path(NO_INPUT, (3, 1, i), 1.0, 0.1).id for i in range(19)]
    assert sorted(ids) == sorted(f'r{i}' for i in range(19))
    with pytest.raises(TracePoolExhausted, match='trace pool exhausted'):
        system.sample_path(NO_INPUT, (3, 1, 19), 1.0, 0.1)


def test_replay_order_depends_on_seed():
    system = ReplaySystem(recorded(19))
    first = [system.sample_path(NO_INPUT, (3, 1, i), 1.0, 0.1).id for i in range(19)]
    again = [system.sample_path(NO_INPUT, (3, 1, i), 1.0, 0.1).id for i in range(19)]
    other = [system.sample_path(NO_INPUT, (4, 1, i), 1.0, 0.1).id for i in range(19)]
    assert first == again
    assert first != other


def test_replay_with_plain_seed_counts_up():
    system = trace_replay_system(recorded(2))
    assert isinstance(system, ReplaySystem)
    system.sample_path(NO_INPUT, 5, 1.0, 0.1)
    system.sample_path(NO_INPUT, 5, 1.0, 0.1)
    with pytest.raises(TracePoolExhausted):
        system.sample_path(NO_INPUT, 5, 1.0, 0.1)


# ------------------------------------------------------------------
#  Registry and inputs
# ------------------------------------------------------------------
def test_build_system_kinds(tmp_path):
    assert isinstance(build_system({'kind': 'bouncing_ball', 'sigma': 0.2}), BouncingBall)
    hitting = build_system({'kind': 'hitting', 'a': 2.0, 'b': 3.0, 'mu': None}, 'system2')
    assert hitting.name == 'system2'
    assert hitting.params.a == 2.0
    (tmp_path / 'one.csv').write_text('time,x\n0,1\n1,0\n', encoding='utf-8')
    replay = build_system({'kind': 'replay', 'traces': str(tmp_path)})
    assert replay.variables == ('x',)


def test_build_system_errors(tmp_path):
    with pytest.raises(SimulationError, match='unknown system kind'):
        build_system({'kind': 'pendulum'})
    with pytest.raises(SimulationError):
        build_system({'kind': 'replay'})
    with pytest.raises(SimulationError):
        build_system({'kind': 'replay', 'traces': str(tmp_path / 'missing')})


def test_input_signal(tmp_path):
    path = tmp_path / 'input.csv'
    path.write_text('time,u\n0,0\n1,2\n', encoding='utf-8')
    signal = load_input({'table': str(path), 'w': 0.5})
    assert signal.value('u', 0.5) == 0.0
    assert signal.value('u', 1.5) == 2.0
    assert signal.value('w', 7.0) == 0.5
    assert list(signal.values('v', [0.0, 1.0], default=3.0)) == [3.0, 3.0]
    with pytest.raises(SimulationError):
        signal.value('v', 0.0)
    assert load_input(None) is NO_INPUT
