# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only

import dataclasses
import functools
import logging
import math
import sys

import nakasim.experiments as experiments
import nakasim.report as report
import nakasim.scenario as scenario
import nakasim.secmath as secmath
import nakasim.simengine as simengine

from nakasim.error import NakaConfigError, NakaDomainError, NakaError, NakaUsageError
from nakasim.model import Protocol


logger = logging.getLogger('root')

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_INTERNAL = 3

# Knobs parsed as booleans and as floats on the command line
BOOL_KNOBS = ('overlay', 'adversary')
FLOAT_KNOBS = ('p_hat', 'p_con')


def create_handler(func):
    """
    Create wrapper for a client subcommand handler, mapping errors to exit codes

    """

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            result = func(*args, **kwargs)
        except (NakaUsageError, NakaConfigError, NakaDomainError) as e:
            logger.error('[{0}] {1}: {2}'.format(func.__name__, type(e).__name__, e))
            return EXIT_USAGE
        except NakaError as e:
            logger.error('[{0}] {1}: {2}'.format(func.__name__, type(e).__name__, e))
            return EXIT_INTERNAL
        except Exception:
            logger.exception('[{0}] Unexpected error'.format(func.__name__))
            return EXIT_INTERNAL

        return EXIT_OK if result is None else result

    return wrapper


def analyze(args):
    """
    Evaluate the security condition and the security probability

    """
    if (args.p_star is None) != (args.n_val is None):
        raise NakaUsageError('--p-star and --n-val must be given together')

    row = {'rho': args.rho, 'delta_s': args.delta, 'e': args.e}
    row['beta_max'] = secmath.beta_max(args.rho, args.delta, args.e)
    logger.info('beta_max = %.4f' % row['beta_max'])

    if args.beta is not None:
        verdict = secmath.is_secure(args.beta, args.rho, args.delta, args.e)
        row.update({'beta': args.beta, 'secure': verdict.secure, 'lhs': verdict.lhs})
        logger.info('beta = %g is %s (f(beta)*rho*delta = %.6g)' % (args.beta, 'secure' if verdict.secure else 'insecure', verdict.lhs))

    if args.n_val is not None:
        g = secmath.nakamoto_coefficient(args.n_val, args.rho, args.delta, args.e)
        p = secmath.security_probability(args.n_val, args.p_star, args.rho, args.delta, args.e)
        row.update({'n_val': args.n_val, 'p_star': args.p_star, 'nakamoto_coefficient': g, 'security_probability': p})
        logger.info('g(n) = %d, P(secure) = %.4f' % (g, p))

    out = report.output_dir('analyze', args.out)
    columns = ['rho', 'delta_s', 'e', 'beta', 'secure', 'lhs', 'beta_max', 'n_val', 'p_star', 'nakamoto_coefficient', 'security_probability']
    report.write_csv(out / 'analysis.csv', [row], columns)
    _finish(out, 'analyze', ['analysis.csv'])


def simulate(args):
    """
    Simulate every run of a scenario and write its metrics

    """
    cfg = load_scenario(args)
    seed = cfg.seed if args.seed is None else args.seed

    runs = simengine.simulate(cfg, seed, trace=args.trace)
    summary = simengine.aggregate_metrics(runs)
    logger.info(
        'Mean over %d runs: delta_max=%.3fs delta_avg=%.3fs delta_p90=%.3fs stale_rate=%.4f'
        % (len(runs), summary.delta_max_s, summary.delta_avg_s, summary.delta_p90_s, summary.stale_rate)
    )

    out = report.output_dir('simulate', args.out)
    (out / 'scenario.yaml').write_text(scenario.dump_config(cfg), encoding='utf-8')
    report.write_csv(out / 'summary.csv', report.run_rows(runs), report.RUN_COLUMNS)
    artifacts = ['scenario.yaml', 'summary.csv']
    if args.receptions:
        report.write_csv(out / 'receptions.csv', report.reception_rows(runs), report.RECEPTION_COLUMNS)
        artifacts.append('receptions.csv')

    partial = any(m.partial for m in runs)
    code = EXIT_PARTIAL if partial else EXIT_OK
    _finish(out, 'simulate', artifacts, seeds=[m.seed for m in runs], config_hash=scenario.config_hash(cfg), exit_code=code)
    return code


def sweep(args):
    """
    Run a simulation sweep over node counts and one more knob

    """
    cfg = load_scenario(args)
    seed = cfg.seed if args.seed is None else args.seed
    seeds = args.seeds or [seed + i for i in range(args.runs or cfg.runs)]
    n_values = args.n or [cfg.n_val]

    if args.attack_grid:
        if args.vary != 'n':
            raise NakaUsageError('--attack-grid already varies the protocol; drop --vary')
        specs = experiments.attack_grid(cfg, n_values, seeds)
    else:
        values = tuple(parse_value(args.vary, v) for v in (args.values or []))
        specs = [experiments.SweepSpec(cfg, tuple(n_values), tuple(seeds), vary=args.vary, values=values)]

    rows, aggregates = [], []
    for spec in specs:
        result = experiments.run_sweep(spec, jobs=args.jobs)
        extra = {'p_hat': spec.base.adversary.p_hat, 'p_con': spec.base.adversary.p_con} if args.attack_grid else {}
        rows.extend({**r, **extra} for r in result.rows)
        aggregates.extend({**a, **extra} for a in result.aggregates)

    columns = experiments.SWEEP_COLUMNS + (['p_hat', 'p_con'] if args.attack_grid else [])
    agg_columns = experiments.AGGREGATE_COLUMNS + (['p_hat', 'p_con'] if args.attack_grid else [])

    out = report.output_dir('sweep', args.out)
    report.write_csv(out / 'sweep.csv', rows, columns)
    report.write_csv(out / 'aggregates.csv', aggregates, agg_columns)
    artifacts = ['sweep.csv', 'aggregates.csv']

    if not args.no_plots:
        import nakasim.plots as plots

        by = ['protocol', 'value'] + (['p_hat', 'p_con'] if args.attack_grid else [])
        series = plots.group_series(aggregates, by, 'n', 'delta_max_s')
        plots.line_chart(out / 'sweep.png', series, 'nodes', 'maximum delay (s)')
        artifacts.append('sweep.png')

    failed = sum(1 for r in rows if r['status'] == 'failed')
    if failed:
        logger.warning('%d of %d runs failed' % (failed, len(rows)))

    code = EXIT_PARTIAL if any(r['status'] == 'partial' for r in rows) else EXIT_OK
    _finish(out, 'sweep', artifacts, seeds=seeds, config_hash=scenario.config_hash(cfg), exit_code=code)
    return code


def fit(args):
    """
    Fit delay metrics of a sweep file against ln(n)

    """
    rows = report.read_csv(args.input)
    if not rows or 'n' not in rows[0]:
        raise NakaUsageError('%s needs an "n" column' % args.input)

    fits = experiments.fit_sweep(rows, metrics=args.metric or experiments.METRICS)
    for f in fits:
        group = ' '.join('%s=%s' % (k, f[k]) for k in experiments.GROUP_COLUMNS if k in f)
        logger.info('%s %s: a=%.4f b=%.4f R2=%.4f' % (group or 'all', f['metric'], f['a'], f['b'], f['r_squared']))

    columns = [c for c in experiments.GROUP_COLUMNS if c in rows[0]] + ['metric', 'a', 'b', 'r_squared', 'points']
    out = report.output_dir('fit', args.out)
    report.write_csv(out / 'fits.csv', fits, columns)
    _finish(out, 'fit', ['fits.csv'])


def table6(args):
    """
    Compute the maximum tolerable adversarial power table

    """
    dedicated = load_dedicated_fits(args.dedicated_fits) if args.dedicated_fits else None
    rows = experiments.reproduce_table6(dedicated_fits=dedicated)
    table = report.markdown_table6(rows)
    logger.info('Maximum tolerable adversarial power:\n%s' % table)

    out = report.output_dir('table6', args.out)
    report.write_csv(out / 'table6.csv', rows, report.TABLE6_COLUMNS)
    (out / 'table6.md').write_text(table, encoding='utf-8')
    _finish(out, 'table6', ['table6.csv', 'table6.md'])


def fig1(args):
    """
    Compute the security probability curve under a selective delay attack

    """
    result = experiments.reproduce_fig1(
        rho=args.rho, p_star=args.p_star, nt_max_s=args.nt, n_range=(args.n_min, args.n_max)
    )
    logger.info('Turnaround at n=%d with P=%.4f' % (result.turnaround.n_star, result.turnaround.p_peak))
    for n, p in result.checkpoints.items():
        logger.info('P(n=%d) = %.4f' % (n, p))

    out = report.output_dir('fig1', args.out)
    columns = ['n', 'delta_s', 'beta_max', 'nakamoto_coefficient', 'security_probability']
    report.write_csv(out / 'fig1.csv', result.curve, columns)

    summary = [{'quantity': 'turnaround', 'n': result.turnaround.n_star, 'value': result.turnaround.p_peak}]
    summary.extend({'quantity': 'checkpoint', 'n': n, 'value': p} for n, p in result.checkpoints.items())
    report.write_csv(out / 'fig1_summary.csv', summary, ['quantity', 'n', 'value'])
    artifacts = ['fig1.csv', 'fig1_summary.csv']

    if not args.no_plots:
        import nakasim.plots as plots

        series = plots.group_series(result.curve, [], 'n', 'security_probability')
        plots.line_chart(out / 'fig1.png', series, 'validators', 'security probability')
        artifacts.append('fig1.png')

    _finish(out, 'fig1', artifacts)


def frontier(args):
    """
    Compute the maximum tolerable delay per chain and corruption probability

    """
    simulated = load_simulated_delays(args.simulated) if args.simulated else None
    rows = experiments.max_delay_frontier(
        chains=args.chains, p_star_values=args.p_stars, n_grid=args.n, target=args.target, simulated=simulated
    )

    out = report.output_dir('frontier', args.out)
    report.write_csv(out / 'frontier.csv', rows, ['chain', 'kind', 'p_star', 'n', 'delay_s', 'status'])
    artifacts = ['frontier.csv']

    if not args.no_plots:
        import nakasim.plots as plots

        plotted = [r for r in rows if math.isfinite(r['delay_s']) and r['status'] != 'unreachable']
        series = plots.group_series(plotted, ['chain', 'kind', 'p_star'], 'n', 'delay_s')
        plots.line_chart(out / 'frontier.png', series, 'validators', 'delay (s)', logy=True)
        artifacts.append('frontier.png')

    _finish(out, 'frontier', artifacts)


def curves(args):
    """
    Compute security curves of the chain presets

    """
    result = experiments.security_curves(
        chains=args.chains,
        p_star_values=args.p_stars,
        n_range=(args.n_min, args.n_max),
        delay_blocks=args.delay_blocks,
        n_zp=args.n_zp,
    )
    for t in result.turnarounds:
        logger.info('%s p*=%g: turnaround at n=%d (P=%.4f)' % (t['chain'], t['p_star'], t['n_star'], t['p_peak']))

    out = report.output_dir('curves', args.out)
    columns = ['chain', 'p_star', 'n', 'delta_s', 'beta_max', 'nakamoto_coefficient', 'security_probability']
    report.write_csv(out / 'curves.csv', result.rows, columns)
    report.write_csv(out / 'turnarounds.csv', result.turnarounds, ['chain', 'p_star', 'n_star', 'p_peak'])
    artifacts = ['curves.csv', 'turnarounds.csv']

    if not args.no_plots:
        import nakasim.plots as plots

        series = plots.group_series(result.rows, ['chain', 'p_star'], 'n', 'security_probability')
        plots.line_chart(out / 'curves.png', series, 'validators', 'security probability')
        artifacts.append('curves.png')

    _finish(out, 'curves', artifacts)


def rates(args):
    """
    Compute the security probability over block rates

    """
    rows = experiments.rate_sweep(args.n_val, args.p_star, args.delta, rho_range=(args.rho_min, args.rho_max), e=args.e)

    out = report.output_dir('rates', args.out)
    columns = ['rho', 'block_interval_s', 'beta_max', 'nakamoto_coefficient', 'security_probability']
    report.write_csv(out / 'rates.csv', rows, columns)
    artifacts = ['rates.csv']

    if not args.no_plots:
        import nakasim.plots as plots

        series = plots.group_series(rows, [], 'rho', 'security_probability')
        plots.line_chart(out / 'rates.png', series, 'block rate (1/s)', 'security probability')
        artifacts.append('rates.png')

    _finish(out, 'rates', artifacts)


def validate_config(args):
    """
    Check a scenario file without running it

    """
    cfg = scenario.load_config(args.config)
    logger.info('%s is valid (%s, n=%d, hash %s)' % (args.config, cfg.protocol.value, cfg.n, scenario.config_hash(cfg)[:16]))


def load_scenario(args):
    """
    Return the scenario given by --config or --preset, with command-line overrides

    """
    if args.config and args.preset:
        raise NakaUsageError('--config and --preset are mutually exclusive')
    if args.config:
        cfg = scenario.load_config(args.config)
    elif args.preset:
        cfg = scenario.preset(args.preset)
    else:
        raise NakaUsageError('Either --config or --preset is required')

    for knob in ('n_val', 'n_zp', 'num_blocks', 'runs'):
        value = getattr(args, knob, None)
        if value is not None:
            cfg = scenario.override(cfg, knob, value) if knob in scenario.KNOBS else dataclasses.replace(cfg, **{knob: value})

    return cfg.validate()


def parse_value(knob, text):
    """
    Parse a --values entry for the given knob

    """
    try:
        if knob == 'protocol':
            return Protocol(text)
        if knob in BOOL_KNOBS:
            if text.lower() not in ('true', 'false', '1', '0', 'on', 'off', 'yes', 'no'):
                raise ValueError(text)
            return text.lower() in ('true', '1', 'on', 'yes')
        if knob in FLOAT_KNOBS:
            return float(text)
        return int(text)
    except ValueError as e:
        raise NakaUsageError('Invalid value %r for --vary %s' % (text, knob)) from e


def chain_of(row):
    """
    Return the chain of a result row, from its 'chain' or 'protocol' column

    """
    if row.get('chain'):
        return row['chain']
    for chain, (_, protocol) in scenario.PRESETS.items():
        if protocol.value == row.get('protocol'):
            return chain
    raise NakaUsageError('Row names neither a chain nor a known protocol: %r' % dict(row))


def load_dedicated_fits(path):
    """
    Read maximum delay fits measured with the dedicated validator network

    """
    fits = {}
    for row in report.read_csv(path):
        if row.get('metric', 'delta_max_s') != 'delta_max_s':
            continue
        if row.get('vary') == 'overlay' and row.get('value', '').lower() != 'true':
            continue
        fits[chain_of(row)] = (float(row['a']), float(row['b']))

    if not fits:
        raise NakaUsageError('%s holds no maximum delay fit' % path)
    return fits


def load_simulated_delays(path):
    """
    Read measured maximum delays per chain from a sweep aggregate file

    """
    simulated = {}
    for row in report.read_csv(path):
        if row.get('delta_max_s') in ('', None):
            continue
        simulated.setdefault(chain_of(row), []).append((int(row['n']), float(row['delta_max_s'])))
    return simulated


def _finish(directory, command, artifacts, seeds=(), config_hash=None, exit_code=EXIT_OK):
    report.write_manifest(directory, command, sys.argv[1:], seeds=seeds, config_hash=config_hash, artifacts=artifacts, exit_code=exit_code)
    logger.info('Results written to %s' % directory)
