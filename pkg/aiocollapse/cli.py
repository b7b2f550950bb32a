"""Command-line front end.

Every command reads an optional sectioned config file, runs inside an
``Application`` and returns a stable exit code: 0 success, 1 a failed
check, 2 a configuration error, 3 an exhausted resource budget.
"""
import argparse
import logging
import os
import sys
from functools import partial
from typing import Callable, Dict, List, Optional

from . import __version__
from .app import (EXIT_CONFIG, EXIT_FAILED, EXIT_OK, Application,
                  OutputDir, WorkerPool)
from .config import (ConfigError, ConstantsConfig, EnvConfig,
                     OracleConfig, ReportConfig, SimulationConfig,
                     VerifyConfig, read_config_file, reference_markdown)
from .core import collapse_strength_internal, spread
from .ensemble import (EnsembleStats, RunConfig, decay_fit_test,
                       estimate_half_decay, fixed_k_half_decay,
                       half_decay_ratio, martingale_test)
from .error import NotCollapsedError
from .oracle import enumerate_exact, oracle_compare
from .output import (REPORT_HEADER, SCENARIO_HEADER, MomentTable,
                     format_table, read_moments_csv, report_rows,
                     scenario_rows, write_csv, write_jsonl,
                     write_moments_csv)
from .scenarios import reproduction_table
from .tracer import DRIVER_ZIPKIN, Span
from .verify import run_battery

logger = logging.getLogger('aiocollapse.cli')

FORMATS = ('csv', 'structured-text', 'text', 'markdown')
ENSEMBLE_CSV = 'ensemble.csv'


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError('must be a positive integer')
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError('must be a 64-bit unsigned integer')
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='aiocollapse',
        description='Discrete energy-conserved collapse simulations.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='sectioned key = value file')
    common.add_argument('--out', default='.', help='output directory')
    common.add_argument('--seed', type=_seed,
                        help='override the seed from the config file')
    common.add_argument('--threads', type=_positive_int,
                        help='worker threads (default AIOCOLLAPSE_THREADS '
                             'or 1)')
    common.add_argument('--format', choices=FORMATS,
                        help='output format')
    common.add_argument('--force', action='store_true',
                        help='overwrite existing output files')
    common.add_argument('-v', '--verbose', action='store_true',
                        help='debug logging')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True
    sub.add_parser('simulate', parents=[common],
                   help='run a trajectory ensemble')
    sub.add_parser('oracle', parents=[common],
                   help='enumerate the event tree exactly')
    sub.add_parser('verify', parents=[common],
                   help='run the property battery')
    sub.add_parser('scenarios', parents=[common],
                   help='evaluate the physical scenarios')
    sub.add_parser('report', parents=[common],
                   help='compare an ensemble against an oracle, or print '
                        'the configuration reference')
    return parser


def _values(args: argparse.Namespace, required: bool = True
            ) -> Dict[str, str]:
    if args.config is None:
        if required:
            raise ConfigError('--config is required for %s' % args.command)
        return {}
    return read_config_file(args.config)


def _check_format(args: argparse.Namespace, allowed: List[str]) -> str:
    fmt = args.format or allowed[0]
    if fmt not in allowed:
        raise ConfigError('--format %s is not supported by %s'
                          % (fmt, args.command))
    return fmt


def _summary(config: RunConfig, stats: EnsembleStats) -> List[dict]:
    records: List[dict] = [
        {'record': 'run', 'mode': str(config.mode),
         'branches': config.branches, 'steps': config.steps,
         'trajectories': stats.count, 'seed': config.base_seed,
         'record_stride': config.record_stride,
         'chunk_size': config.chunk_size},
        {'record': 'absorbed', 'histogram': stats.absorbed,
         'unabsorbed': stats.unabsorbed},
        dict(martingale_test(stats).to_record(), record='test'),
    ]
    if config.branches < 2:
        return records
    if config.initial[0] * config.initial[1] <= 0.0:
        return records
    if config.mode.is_fixed:
        k = config.mode.fixed_k
        records.append(dict(decay_fit_test(stats, 0, 1, k).to_record(),
                            record='test'))
    else:
        k = float(collapse_strength_internal(spread(
            config.initial.probs, config.spectrum.spread_matrix())))
    half: dict = {'record': 'half_decay', 'pair': [0, 1],
                  'initial_k': k, 'fixed_k_steps': fixed_k_half_decay(k)}
    try:
        half['measured_steps'] = estimate_half_decay(stats, 0, 1)
        if not config.mode.is_fixed:
            half['ratio'] = half_decay_ratio(stats, 0, 1, k)
    except NotCollapsedError as e:
        half['not_collapsed'] = str(e)
    records.append(half)
    return records


def _step_records(table: MomentTable) -> List[dict]:
    header = table.header()
    return [dict(zip(header, row)) for row in table.rows()]


async def cmd_simulate(app: Application, args: argparse.Namespace,
                       ctx: Span) -> int:
    values = _values(args)
    fmt = _check_format(args, ['csv', 'structured-text'])
    config = SimulationConfig(values).run_config(
        seed=args.seed, constants=ConstantsConfig(values).constants())
    moments_name = ENSEMBLE_CSV if fmt == 'csv' else 'ensemble.jsonl'
    names = [moments_name, 'summary.jsonl']
    if config.groups is not None:
        names.append('groups_' + moments_name)
    app.out.claim(*names)
    ctx.tag('trajectories', config.trajectories)
    ctx.tag('steps', config.steps)

    stats = await app.pool.run_ensemble(config, ctx)

    tables = [(moments_name, MomentTable.from_stats(stats))]
    if stats.grouped is not None:
        tables.append(('groups_' + moments_name,
                       MomentTable.from_stats(stats.grouped)))
    for name, table in tables:
        with app.out.open(name) as f:
            if fmt == 'csv':
                write_moments_csv(f, table)
            else:
                write_jsonl(f, _step_records(table))
    with app.out.open('summary.jsonl') as f:
        write_jsonl(f, _summary(config, stats))
    app.log_info('wrote %s' % ', '.join(app.out.written))
    return EXIT_OK


async def cmd_oracle(app: Application, args: argparse.Namespace,
                     ctx: Span) -> int:
    values = _values(args)
    fmt = _check_format(args, ['csv', 'structured-text'])
    sim = SimulationConfig(values)
    oracle = OracleConfig(values)
    constants = ConstantsConfig(values).constants()
    steps = sim.steps if oracle.steps is None else oracle.steps
    name = 'oracle.csv' if fmt == 'csv' else 'oracle.jsonl'
    app.out.claim(name)
    ctx.tag('steps', steps)
    moments = await app.pool.call(
        enumerate_exact, sim.initial_value(), steps, sim.mode_value(),
        sim.spectrum(constants), oracle.node_budget)
    ctx.tag('nodes', moments.nodes)
    table = MomentTable.from_moments(moments)
    with app.out.open(name) as f:
        if fmt == 'csv':
            write_moments_csv(f, table)
        else:
            write_jsonl(f, _step_records(table))
    app.log_info('enumerated %d nodes, wrote %s'
                 % (moments.nodes, app.out.path_for(name)))
    return EXIT_OK


async def cmd_verify(app: Application, args: argparse.Namespace,
                     ctx: Span) -> int:
    values = _values(args, required=False)
    fmt = _check_format(args, ['structured-text', 'text'])
    settings = VerifyConfig(values).settings(seed=args.seed)
    name = 'verify.jsonl' if fmt == 'structured-text' else 'verify.txt'
    app.out.claim(name)
    ctx.tag('mutation', settings.mutation)
    reports = await app.pool.call(run_battery, settings, app.pool.executor,
                                  ctx)
    table = format_table(REPORT_HEADER, report_rows(reports))
    with app.out.open(name) as f:
        if fmt == 'text':
            f.write(table + '\n')
        else:
            write_jsonl(f, [r.to_record() for r in reports])
    print(table)
    passed = all(r.passed for r in reports)
    ctx.tag('passed', passed)
    return EXIT_OK if passed else EXIT_FAILED


async def cmd_scenarios(app: Application, args: argparse.Namespace,
                        ctx: Span) -> int:
    values = _values(args, required=False)
    fmt = _check_format(args, ['csv', 'structured-text', 'text'])
    constants = ConstantsConfig(values).constants()
    name = {'csv': 'scenarios.csv', 'structured-text': 'scenarios.jsonl',
            'text': 'scenarios.txt'}[fmt]
    app.out.claim(name)
    rows = reproduction_table(constants)
    table = format_table(SCENARIO_HEADER, scenario_rows(rows))
    with app.out.open(name) as f:
        if fmt == 'csv':
            write_csv(f, SCENARIO_HEADER, scenario_rows(rows))
        elif fmt == 'structured-text':
            write_jsonl(f, [r.to_record() for r in rows])
        else:
            f.write(table + '\n')
    print(table)
    failed = [r.name for r in rows if not r.within_tolerance]
    ctx.tag('rows', len(rows))
    ctx.tag('failed', len(failed))
    if failed:
        app.log_err('outside tolerance: %s' % ', '.join(failed))
        return EXIT_FAILED
    return EXIT_OK


async def cmd_report(app: Application, args: argparse.Namespace,
                     ctx: Span) -> int:
    if args.format == 'markdown':
        if args.config is not None:
            raise ConfigError('--format markdown prints the configuration '
                              'reference and takes no --config')
        print(reference_markdown())
        return EXIT_OK
    values = _values(args)
    fmt = _check_format(args, ['structured-text', 'text'])
    paths = ReportConfig(values)
    if paths.ensemble_csv is None or paths.oracle_csv is None:
        raise ConfigError('report.ensemble_csv and report.oracle_csv are '
                          'required')
    z = VerifyConfig(values).settings().oracle_z
    name = 'report.jsonl' if fmt == 'structured-text' else 'report.txt'
    app.out.claim(name)
    with open(paths.ensemble_csv, encoding='UTF-8') as f:
        ensemble = read_moments_csv(f)
    with open(paths.oracle_csv, encoding='UTF-8') as f:
        exact = read_moments_csv(f)
    report = oracle_compare(exact, ensemble, z)
    rows = [[r['step'], r['max_abs_diff_p'], r['max_abs_diff_x'],
             r['max_abs_z']] for r in report.details['rows']]
    table = format_table(['step', 'max_abs_diff_p', 'max_abs_diff_x',
                          'max_abs_z'], rows)
    with app.out.open(name) as f:
        if fmt == 'text':
            f.write(table + '\n')
        else:
            write_jsonl(f, [report.to_record()])
    print(table)
    print('%s: max |z| %.3g' % ('PASS' if report.passed else 'FAIL',
                                report.max_abs_z))
    return EXIT_OK if report.passed else EXIT_FAILED


Command = Callable[[Application, argparse.Namespace, Span], object]

COMMANDS: Dict[str, Command] = {
    'simulate': cmd_simulate,
    'oracle': cmd_oracle,
    'verify': cmd_verify,
    'scenarios': cmd_scenarios,
    'report': cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    app = Application()
    try:
        env = EnvConfig(os.environ)
    except ConfigError as e:
        app.setup_logging()
        app.log_err(str(e))
        return EXIT_CONFIG
    app.setup_logging(
        level=logging.DEBUG if args.verbose else logging.INFO,
        tracer_driver=DRIVER_ZIPKIN if env.tracer_addr else None,
        tracer_addr=env.tracer_addr, tracer_name=env.tracer_name,
        tracer_sample_rate=env.tracer_sample_rate)
    app.add('pool', WorkerPool(args.threads or env.threads))
    app.add('out', OutputDir(args.out, args.force))
    command = COMMANDS[args.command]
    return app.run(partial(command, app, args), name=args.command)


if __name__ == '__main__':  # pragma: no cover
    sys.exit(main())
