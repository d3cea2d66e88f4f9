"""Command-line front end.

Exit codes: 0 conform (or monitor true), 1 nonconform (or monitor false),
2 inconclusive, 3 runtime error, 64 configuration or usage error.
"""
import configparser
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from config import get_config
from engine import TestConfig, TestConfigError, run_conformance, run_equality_test, sequence_sampler
from forms import (ConfigError, FormulaForm, OutputForm, SystemForm, TestSettingsForm, split_list,
                   validate_input_section, validate_section)
from stats import Assertion
from stl import (FormulaError, ParamSpec, check_monotonicity, evaluate, instantiate, parse_formula,
                 satisfaction_signal)
from systems import SimulationError, build_system, load_input, sample_path
from traces import TraceFormatError, load_traces, write_traces_csv
from utils import ConformaError, configure_logging, entropy_seed, format_sci, format_stat, log_activity

logger = logging.getLogger(__name__)

EXIT_CODES = {Assertion.CONFORM: 0, Assertion.NONCONFORM: 1, Assertion.INCONCLUSIVE: 2}
EXIT_ERROR = 3
EXIT_USAGE = 64

TEMPLATES = Path(__file__).resolve().parent / 'templates'
PATH_KEYS = ('traces', 'table', 'report')


@dataclass
class RunConfig:
    test: TestConfig
    formula: object
    systems: tuple
    input: object
    report_path: Path = None


def _read_ini(path):
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with path.open(encoding='utf-8') as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigError(f'{path}: {exc.strerror or exc}') from None
    except configparser.Error as exc:
        raise ConfigError(f'{path}: {exc}') from None
    sections = {}
    for name in parser.sections():
        section = dict(parser.items(name))
        for key in PATH_KEYS:
            if section.get(key) and not Path(section[key]).is_absolute():
                section[key] = str(path.parent / section[key])
        sections[name] = section
    return sections


def load_run_config(path, threads=None, seed=None):
    """Read and validate a run configuration file"""
    sections = _read_ini(path)
    errors = []
    for required in ('test', 'formula', 'system1', 'system2'):
        if required not in sections:
            errors.append(f'missing section [{required}]')
    if errors:
        raise ConfigError(errors)

    test = validate_section(TestSettingsForm, 'test', sections['test'], errors)
    formula = validate_section(FormulaForm, 'formula', sections['formula'], errors)
    system_data = [validate_section(SystemForm, name, sections[name], errors)
                   for name in ('system1', 'system2')]
    input_data = validate_input_section(sections.get('input'), errors)
    output = validate_section(OutputForm, 'output', sections.get('output'), errors)
    if errors:
        raise ConfigError(errors)

    try:
        cfg = TestConfig(
            c=test['c'], alpha_d=test['alpha_d'], k1=test['k1'], k2=test['k2'],
            max_samples=test['max_samples'],
            master_seed=seed if seed is not None else test['seed'],
            tol=test['tol'], horizon=test['horizon'], step=test['step'],
            threads=threads or test['threads'])
        pf = parse_formula(formula['text'], split_list(formula['signature']),
                           split_list(formula['params'], ';'))
        systems = tuple(build_system(data, name) for data, name in zip(system_data, ('system1', 'system2')))
        run_input = load_input(input_data)
    except (TestConfigError, FormulaError, SimulationError, TraceFormatError) as exc:
        raise ConfigError(str(exc)) from None

    if not pf.dimension:
        raise ConfigError('formula.params: declare at least one parameter')
    for system in systems:
        missing = set(pf.signature) - set(system.variables)
        if missing:
            raise ConfigError(f'{system.name}: signals {sorted(missing)!r} are not produced by this system')
    report = output['report'] if output and output.get('report') else None
    return RunConfig(cfg, pf, systems, run_input, Path(report) if report else None)


def _write_report(report, path):
    text = json.dumps(report.to_dict(), indent=get_config().REPORT_INDENT)
    if path is None:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + '\n', encoding='utf-8')
    logger.info('report written to %s', path)


def _finish(report, out):
    _write_report(report, out)
    click.echo(report.summary_line())
    log_activity('command-end', report.assertion.value)
    return EXIT_CODES[report.assertion]


class ConformaGroup(click.Group):
    """Maps results and failures onto the documented exit codes"""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            code = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.exceptions.Abort:
            click.echo('aborted', err=True)
            sys.exit(EXIT_ERROR)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_USAGE)
        except ConfigError as exc:
            click.echo(f'error: {exc}', err=True)
            sys.exit(EXIT_USAGE)
        except ConformaError as exc:
            logger.debug('command failed', exc_info=True)
            click.echo(f'error: {exc}', err=True)
            sys.exit(EXIT_ERROR)
        except Exception as exc:
            logger.exception('unexpected failure')
            click.echo(f'error: {type(exc).__name__}: {exc}', err=True)
            sys.exit(EXIT_ERROR)
        sys.exit(code if isinstance(code, int) else 0)


@click.group(cls=ConformaGroup)
@click.option('--log-level', default=None,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              help='Overrides CONFORMA_LOG.')
def cli(log_level):
    """Statistical conformance checking for stochastic systems."""
    configure_logging(log_level)


@cli.command()
@click.argument('config_path', type=click.Path(dir_okay=False))
@click.option('--threads', type=click.IntRange(min=1), default=None, help='Worker threads for sampling.')
@click.option('--seed', type=click.IntRange(min=0), default=None, help='Overrides [test] seed.')
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='Report path (JSON).')
def verify(config_path, threads, seed, out):
    """Run the conformance test described by CONFIG_PATH."""
    log_activity('command-start', f'verify {config_path}')
    run = load_run_config(config_path, threads=threads, seed=seed)
    sys1, sys2 = run.systems
    report = run_conformance(sys1, sys2, run.input, run.formula, run.test)
    return _finish(report, out or run.report_path)


def read_samples(path):
    """One value or comma/space separated K-tuple per line; blank and # lines skipped"""
    rows = []
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except OSError as exc:
        raise ConfigError(f'{path}: {exc.strerror or exc}') from None
    for number, line in enumerate(lines, start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        try:
            row = [float(item) for item in line.replace(',', ' ').split()]
        except ValueError:
            raise ConfigError(f'{path}, line {number}: not a number: {line!r}') from None
        if rows and len(row) != len(rows[0]):
            raise ConfigError(f'{path}, line {number}: expected {len(rows[0])} values, got {len(row)}')
        if any(np.isnan(row)):
            raise ConfigError(f'{path}, line {number}: NaN is not a sample')
        rows.append(row)
    if not rows:
        raise ConfigError(f'{path}: no samples')
    return rows


@cli.command('test-dist')
@click.argument('file_x', type=click.Path(dir_okay=False))
@click.argument('file_y', type=click.Path(dir_okay=False))
@click.option('--c', 'c', type=float, required=True, help='Approximate-equality threshold.')
@click.option('--alpha', 'alpha_d', type=float, required=True, help='Desired confidence.')
@click.option('--k1', type=click.IntRange(min=1), default=None)
@click.option('--k2', type=click.IntRange(min=1), default=None)
@click.option('--max-samples', type=click.IntRange(min=1), default=None)
@click.option('--threads', type=click.IntRange(min=1), default=None)
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='Report path (JSON).')
def test_dist(file_x, file_y, c, alpha_d, k1, k2, max_samples, threads, out):
    """Sequential two-sample test on recorded samples, consumed in file order."""
    log_activity('command-start', f'test-dist {file_x} {file_y}')
    x, y = read_samples(file_x), read_samples(file_y)
    if len(x[0]) != len(y[0]):
        raise ConfigError(f'sample dimensions differ: {len(x[0])} vs {len(y[0])}')
    try:
        cfg = TestConfig(c=c, alpha_d=alpha_d, k1=k1, k2=k2, max_samples=max_samples,
                         master_seed=0, threads=threads)
    except TestConfigError as exc:
        raise ConfigError(str(exc)) from None
    report = run_equality_test(sequence_sampler(x), sequence_sampler(y), cfg,
                               describe={'systems': [str(file_x), str(file_y)]})
    return _finish(report, out)


def _parse_assignments(assignments):
    values = {}
    for item in assignments:
        name, sep, value = item.partition('=')
        if not sep or not name.strip():
            raise click.BadParameter(f'{item!r} (expected name=value)', param_hint='--param')
        try:
            values[name.strip()] = float(value)
        except ValueError:
            raise click.BadParameter(f'{item!r}: not a number', param_hint='--param') from None
    return values


@cli.command()
@click.argument('formula')
@click.argument('trace_path', type=click.Path())
@click.option('--param', 'assignments', multiple=True, help='Parameter value, name=value (repeatable).')
@click.option('--t0', type=float, default=0.0, show_default=True, help='Evaluation time.')
@click.option('--all', 'show_all', is_flag=True, help='Also print where the formula holds.')
def monitor(formula, trace_path, assignments, t0, show_all):
    """Evaluate FORMULA on every trace in TRACE_PATH."""
    values = _parse_assignments(assignments)
    traces = load_traces(trace_path)
    pf = parse_formula(formula, traces[0].variables, [ParamSpec(name) for name in values])
    f = instantiate(pf, [values[name] for name in pf.names])
    verdicts = []
    for trace in traces:
        verdict = evaluate(f, trace, t0)
        verdicts.append(verdict)
        text = 'true' if verdict else 'false'
        click.echo(text if len(traces) == 1 else f'{trace.id}: {text}')
        if show_all:
            runs = satisfaction_signal(f, trace).true_intervals(end=trace.end_time)
            for start, stop in runs:
                click.echo(f'  holds on [{start:.6g}, {stop:.6g})')
    return 0 if all(verdicts) else 1


def _resolve_seed(seed, run):
    if seed is not None:
        return seed
    if run.test.master_seed is not None:
        return run.test.master_seed
    seed = entropy_seed()
    click.echo(f'seed: {seed}', err=True)
    return seed


@cli.command()
@click.argument('config_path', type=click.Path(dir_okay=False))
@click.option('--n', 'count', type=click.IntRange(min=1), default=1, show_default=True)
@click.option('--seed', type=click.IntRange(min=0), default=None)
@click.option('--out-dir', type=click.Path(file_okay=False), required=True)
@click.option('--system', 'which', type=click.Choice(['1', '2']), default='1', show_default=True)
def simulate(config_path, count, seed, out_dir, which):
    """Write COUNT sample paths of one configured system as CSV files."""
    run = load_run_config(config_path)
    seed = _resolve_seed(seed, run)
    index = int(which)
    system = run.systems[index - 1]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        trace = sample_path(system, run.input, (seed, index, i), run.test.horizon, run.test.step)
        write_traces_csv([trace], out / f'trace_{i:04d}.csv')
    click.echo(f'wrote {count} trace(s) of {system.name} to {out}')
    return 0


@cli.command('check-monotonicity')
@click.argument('config_path', type=click.Path(dir_okay=False))
@click.option('--n', 'count', type=click.IntRange(min=1), default=10, show_default=True)
@click.option('--grid', type=click.IntRange(min=2), default=None)
@click.option('--seed', type=click.IntRange(min=0), default=None)
def check_monotonicity_cmd(config_path, count, grid, seed):
    """Scan the parameter brackets on sampled paths of both systems."""
    run = load_run_config(config_path)
    seed = _resolve_seed(seed, run)
    traces = []
    for index, system in enumerate(run.systems, start=1):
        for i in range(count):
            trace = sample_path(system, run.input, (seed, index, i), run.test.horizon, run.test.step)
            traces.append(trace.with_id(f'{system.name}#{i}'))
    report = check_monotonicity(run.formula, traces, grid)
    click.echo(str(report))
    return 0 if report.monotone else 1


def render_results(reports, fmt='md'):
    env = Environment(loader=FileSystemLoader(str(TEMPLATES)), undefined=StrictUndefined,
                      trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)
    env.filters['sci'] = format_sci
    env.filters['stat'] = format_stat
    template = env.get_template(f'results_table.{fmt}.j2')
    return template.render(reports=reports)


@cli.command()
@click.argument('report_paths', nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option('--format', 'fmt', type=click.Choice(['md', 'text']), default='md', show_default=True)
def report(report_paths, fmt):
    """Render report files as a results table."""
    reports = []
    for path in report_paths:
        try:
            reports.append(json.loads(Path(path).read_text(encoding='utf-8')))
        except (OSError, ValueError) as exc:
            raise ConfigError(f'{path}: {exc}') from None
    click.echo(render_results(reports, fmt), nl=False)
    return 0


def main():
    cli(prog_name='conforma')


if __name__ == '__main__':
    main()
