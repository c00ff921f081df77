# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only

import argparse
import sys

import cmds
import log

from nakasim.experiments import CHAINS, METRICS
from nakasim.scenario import KNOBS, PRESETS


class UsageParser(argparse.ArgumentParser):
    """
    Argument parser that exits with the usage error code on bad arguments

    """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(cmds.EXIT_USAGE, '%s: error: %s\n' % (self.prog, message))


def build_parser():
    parser = UsageParser(
        description='Block propagation simulator and security analysis for Nakamoto-style blockchains.',
    )

    parser.add_argument('-v', '--verbose', dest='verbose', action='store_true')

    subparsers = parser.add_subparsers(metavar='[command]', parser_class=UsageParser)

    parser_out = argparse.ArgumentParser(add_help=False)
    parser_out.add_argument('-o', '--out', type=str, dest='out', help='Output directory (must be empty)')
    parser_out.add_argument('--no-plots', action='store_true', dest='no_plots', help='Skip PNG figures')

    parser_scenario = argparse.ArgumentParser(add_help=False)
    group_scenario = parser_scenario.add_mutually_exclusive_group(required=True)
    group_scenario.add_argument('-c', '--config', type=str, dest='config', help='Scenario YAML file')
    group_scenario.add_argument('-p', '--preset', choices=sorted(PRESETS), dest='preset', help='Chain preset')
    parser_scenario.add_argument('-s', '--seed', type=int, dest='seed', help='Base seed')
    parser_scenario.add_argument('--n-val', type=int, dest='n_val', help='Number of validators')
    parser_scenario.add_argument('--n-zp', type=int, dest='n_zp', help='Number of zero-power nodes')
    parser_scenario.add_argument('--blocks', type=int, dest='num_blocks', help='Blocks per run')
    parser_scenario.add_argument('--runs', type=int, dest='runs', help='Runs per point')

    cmd_analyze = subparsers.add_parser('analyze', help='Evaluate the security condition', parents=[parser_out])
    cmd_analyze.add_argument('--rho', type=float, required=True, help='Block rate (blocks/s)')
    cmd_analyze.add_argument('--delta', type=float, required=True, help='Network delay (s)')
    cmd_analyze.add_argument('--e', type=float, default=1.0, help='Magnification factor')
    cmd_analyze.add_argument('--beta', type=float, help='Adversarial power to check')
    cmd_analyze.add_argument('--p-star', type=float, dest='p_star', help='Corruption probability')
    cmd_analyze.add_argument('--n-val', type=int, dest='n_val', help='Number of validators')
    cmd_analyze.set_defaults(func=cmds.create_handler(cmds.analyze))

    cmd_simulate = subparsers.add_parser('simulate', help='Simulate a scenario', parents=[parser_scenario, parser_out])
    cmd_simulate.add_argument(
        '--receptions', action='store_true', dest='receptions', help='Write every reception time'
    )
    cmd_simulate.add_argument(
        '--trace', action='store_true', dest='trace', help='Log every event (with -v)'
    )
    cmd_simulate.set_defaults(func=cmds.create_handler(cmds.simulate))

    cmd_sweep = subparsers.add_parser('sweep', help='Run a simulation sweep', parents=[parser_scenario, parser_out])
    cmd_sweep.add_argument('--n', type=int, nargs='+', dest='n', help='Node counts')
    cmd_sweep.add_argument('--seeds', type=int, nargs='+', dest='seeds', help='Seeds (default: --seed, --seed+1, ...)')
    cmd_sweep.add_argument('--vary', choices=sorted(KNOBS), default='n', dest='vary', help='Knob swept next to n')
    cmd_sweep.add_argument('--values', nargs='+', dest='values', help='Values of the --vary knob')
    cmd_sweep.add_argument(
        '--attack-grid', action='store_true', dest='attack_grid', help='Sweep protocols under the attack grid'
    )
    cmd_sweep.add_argument('-j', '--jobs', type=int, dest='jobs', help='Parallel runs (default: all cores)')
    cmd_sweep.set_defaults(func=cmds.create_handler(cmds.sweep))

    cmd_fit = subparsers.add_parser('fit', help='Fit sweep delays against ln(n)', parents=[parser_out])
    cmd_fit.add_argument('-i', '--input', type=str, required=True, dest='input', help='Sweep CSV file')
    cmd_fit.add_argument('--metric', choices=METRICS, nargs='+', dest='metric', help='Metrics to fit')
    cmd_fit.set_defaults(func=cmds.create_handler(cmds.fit))

    cmd_table6 = subparsers.add_parser('table6', help='Tolerable adversarial power per chain', parents=[parser_out])
    cmd_table6.add_argument(
        '--dedicated-fits', type=str, dest='dedicated_fits', help='Fits CSV of the dedicated validator network'
    )
    cmd_table6.set_defaults(func=cmds.create_handler(cmds.table6))

    cmd_fig1 = subparsers.add_parser('fig1', help='Security probability under a delay attack', parents=[parser_out])
    cmd_fig1.add_argument('--rho', type=float, default=1.0 / 20.0, help='Block rate (blocks/s)')
    cmd_fig1.add_argument('--p-star', type=float, default=0.125, dest='p_star', help='Corruption probability')
    cmd_fig1.add_argument('--nt', type=float, default=100.0, dest='nt', help='Attack delay (s)')
    cmd_fig1.add_argument('--n-min', type=float, default=10, dest='n_min')
    cmd_fig1.add_argument('--n-max', type=float, default=10**7, dest='n_max')
    cmd_fig1.set_defaults(func=cmds.create_handler(cmds.fig1))

    cmd_frontier = subparsers.add_parser('frontier', help='Maximum tolerable delay', parents=[parser_out])
    cmd_frontier.add_argument('--chains', choices=CHAINS, nargs='+', default=list(CHAINS), dest='chains')
    cmd_frontier.add_argument(
        '--p-stars', type=float, nargs='+', default=[0.0, 0.05, 0.1, 0.125], dest='p_stars'
    )
    cmd_frontier.add_argument(
        '--n', type=int, nargs='+', default=[10, 100, 1000, 10**4, 10**5, 10**6], dest='n'
    )
    cmd_frontier.add_argument('--target', type=float, default=0.9, dest='target', help='Security probability target')
    cmd_frontier.add_argument('--simulated', type=str, dest='simulated', help='Sweep aggregates CSV to compare')
    cmd_frontier.set_defaults(func=cmds.create_handler(cmds.frontier))

    cmd_curves = subparsers.add_parser('curves', help='Security curves of the chain presets', parents=[parser_out])
    cmd_curves.add_argument('--chains', choices=CHAINS, nargs='+', default=list(CHAINS), dest='chains')
    cmd_curves.add_argument('--p-stars', type=float, nargs='+', default=[0.1, 0.125, 0.15], dest='p_stars')
    cmd_curves.add_argument('--delay-blocks', type=int, default=5, dest='delay_blocks')
    cmd_curves.add_argument('--n-zp', type=int, default=0, dest='n_zp', help='Zero-power nodes')
    cmd_curves.add_argument('--n-min', type=float, default=10, dest='n_min')
    cmd_curves.add_argument('--n-max', type=float, default=10**7, dest='n_max')
    cmd_curves.set_defaults(func=cmds.create_handler(cmds.curves))

    cmd_rates = subparsers.add_parser('rates', help='Security probability over block rates', parents=[parser_out])
    cmd_rates.add_argument('--n-val', type=int, required=True, dest='n_val')
    cmd_rates.add_argument('--p-star', type=float, required=True, dest='p_star')
    cmd_rates.add_argument('--delta', type=float, required=True, help='Network delay (s)')
    cmd_rates.add_argument('--e', type=float, default=1.0, help='Magnification factor')
    cmd_rates.add_argument('--rho-min', type=float, default=1e-3, dest='rho_min')
    cmd_rates.add_argument('--rho-max', type=float, default=1.0, dest='rho_max')
    cmd_rates.set_defaults(func=cmds.create_handler(cmds.rates))

    cmd_validate = subparsers.add_parser('validate-config', help='Check a scenario file')
    cmd_validate.add_argument('config', type=str)
    cmd_validate.set_defaults(func=cmds.create_handler(cmds.validate_config))

    return parser


if __name__ == '__main__':
    parser = build_parser()
    args = parser.parse_args()

    logger = log.create_logger('root', 'DEBUG' if args.verbose else 'INFO')

    logger.debug('Initialized')

    if 'func' not in dir(args):
        logger.error('No command specified, exiting')
        sys.exit(cmds.EXIT_USAGE)

    result = args.func(args)

    logger.debug('Exit status %d' % result)
    sys.exit(result)
