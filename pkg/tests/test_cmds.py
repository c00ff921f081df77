# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only

import json

from unittest.mock import Mock

import pytest

import cmds
import client

import nakasim.error as error
import nakasim.simengine as simengine

from nakasim.report import MANIFEST_NAME, read_csv


CONFIG = """\
scenario:
  n_val: 10
  protocol: direct_push
  num_blocks: 2
  runs: 1
security:
  rho: 0.05
"""


def run_command(*argv):
    """
    Parse a command line and run its handler, returning the exit code

    """
    args = client.build_parser().parse_args([str(a) for a in argv])
    return args.func(args)


def read_manifest(directory):
    """
    Return the manifest of an output directory

    """
    return json.loads((directory / MANIFEST_NAME).read_text())


def test_create_handler_exit_codes():
    """
    Assert that create_handler() maps errors to exit codes

    """
    assert cmds.create_handler(lambda: None)() == cmds.EXIT_OK
    assert cmds.create_handler(lambda: cmds.EXIT_PARTIAL)() == cmds.EXIT_PARTIAL

    for exc, code in [
        (error.NakaUsageError('bad flag'), cmds.EXIT_USAGE),
        (error.NakaConfigError('bad key'), cmds.EXIT_USAGE),
        (error.NakaDomainError('bad value'), cmds.EXIT_USAGE),
        (error.NakaSimulationError('bad state'), cmds.EXIT_INTERNAL),
        (RuntimeError('boom'), cmds.EXIT_INTERNAL),
    ]:

        def fails(exc=exc):
            raise exc

        assert cmds.create_handler(fails)() == code


def test_parser_errors_are_usage_errors(capsys):
    """
    Assert that bad command lines exit with the usage error code

    """
    for argv in [
        ['analyze', '--delta', '1'],
        ['simulate', '--preset', 'dogecoin'],
        ['analyze', '--rho', 'fast', '--delta', '1'],
        ['launch'],
    ]:
        with pytest.raises(SystemExit) as e:
            client.build_parser().parse_args(argv)

        assert e.value.code == cmds.EXIT_USAGE

    assert 'error:' in capsys.readouterr().err


def test_magnification_help(capsys):
    """
    Assert that --e is described as the magnification factor

    """
    for command in ['analyze', 'rates']:
        with pytest.raises(SystemExit) as e:
            client.build_parser().parse_args([command, '--help'])

        assert e.value.code == 0
        assert 'Magnification factor' in capsys.readouterr().out


def test_analyze(tmp_path):
    """
    Assert that analyze writes the security verdict and tolerable power

    """
    out = tmp_path / 'analyze'

    assert run_command('analyze', '--rho', 0.05, '--delta', 43.06, '--beta', 0.25, '--out', out) == 0

    row = read_csv(out / 'analysis.csv')[0]
    assert round(float(row['beta_max']), 4) == 0.2821
    assert row['secure'] == 'True'
    assert read_manifest(out)['artifacts'] == ['analysis.csv']


def test_analyze_security_probability(tmp_path):
    """
    Assert that analyze reports the probability for a validator count

    """
    out = tmp_path / 'analyze'
    argv = ['analyze', '--rho', 0.05, '--delta', 101.04, '--p-star', 0.125, '--n-val', 10, '--out', out]

    assert run_command(*argv) == 0

    row = read_csv(out / 'analysis.csv')[0]
    assert round(float(row['security_probability']), 3) == 0.639
    assert row['nakamoto_coefficient'] == '1'


def test_analyze_inconsistent_flags(tmp_path):
    """
    Assert that --p-star without --n-val is a usage error

    """
    assert run_command('analyze', '--rho', 0.05, '--delta', 1, '--p-star', 0.1, '--out', tmp_path / 'a') == 1


def test_analyze_out_of_domain(tmp_path):
    """
    Assert that a negative rate is a usage error

    """
    assert run_command('analyze', '--rho', -1, '--delta', 1, '--out', tmp_path / 'a') == 1


def test_output_directory_not_empty(tmp_path):
    """
    Assert that results never overwrite an existing directory

    """
    (tmp_path / 'keep.txt').write_text('x')

    assert run_command('analyze', '--rho', 0.05, '--delta', 1, '--out', tmp_path) == 1


def test_simulate_is_reproducible(tmp_path):
    """
    Assert that the same seed writes identical summary files

    """
    config = tmp_path / 'scenario.yaml'
    config.write_text(CONFIG)

    for name in ('a', 'b'):
        assert run_command('simulate', '--config', config, '--seed', 4, '--receptions', '--out', tmp_path / name) == 0

    first = (tmp_path / 'a' / 'summary.csv').read_bytes()
    assert first == (tmp_path / 'b' / 'summary.csv').read_bytes()
    assert len(read_csv(tmp_path / 'a' / 'receptions.csv')) == 2 * 10

    manifest = read_manifest(tmp_path / 'a')
    assert manifest['seeds'] == [4]
    assert len(manifest['config_hash']) == 64


def test_simulate_preset_overrides(tmp_path):
    """
    Assert that command-line flags override the preset

    """
    out = tmp_path / 'sim'

    assert run_command('simulate', '--preset', 'monero', '--n-val', 10, '--blocks', 2, '--runs', 2, '--out', out) == 0

    rows = read_csv(out / 'summary.csv')
    assert [r['seed'] for r in rows] == ['0', '1']
    assert 'n_val: 10' in (out / 'scenario.yaml').read_text()


def test_simulate_partial_run(tmp_path, monkeypatch):
    """
    Assert that a run hitting the cutoff exits with code 2

    """
    partial = simengine.RunMetrics((), 0.0, 0.0, 0.0, 0.0, True, 0, '00', 0, 0)
    monkeypatch.setattr(simengine, 'simulate', Mock(return_value=[partial]))
    config = tmp_path / 'scenario.yaml'
    config.write_text(CONFIG)

    assert run_command('simulate', '--config', config, '--out', tmp_path / 'sim') == 2
    assert read_manifest(tmp_path / 'sim')['exit_code'] == 2


def test_simulate_invalid_config(tmp_path):
    """
    Assert that an invalid scenario file is a usage error

    """
    config = tmp_path / 'scenario.yaml'
    config.write_text(CONFIG.replace('n_val: 10', 'n_val: -3'))

    assert run_command('simulate', '--config', config, '--out', tmp_path / 'sim') == 1
    assert not (tmp_path / 'sim').exists()


def test_sweep_and_fit(tmp_path):
    """
    Assert that a sweep file can be fitted

    """
    out = tmp_path / 'sweep'
    argv = ['sweep', '--preset', 'monero', '--blocks', 2, '--n', 10, 14, 20, '--seeds', 1, 2]

    assert run_command(*argv, '--jobs', 1, '--out', out) == 0

    rows = read_csv(out / 'sweep.csv')
    assert len(rows) == 6
    assert {r['status'] for r in rows} == {'ok'}
    assert len(read_csv(out / 'aggregates.csv')) == 3
    assert (out / 'sweep.png').exists()

    assert run_command('fit', '--input', out / 'sweep.csv', '--out', tmp_path / 'fit') == 0

    fits = read_csv(tmp_path / 'fit' / 'fits.csv')
    assert {f['metric'] for f in fits} == {'delta_max_s', 'delta_avg_s', 'delta_p90_s'}


def test_sweep_knob_values(tmp_path):
    """
    Assert that --vary crosses node counts with the given values

    """
    out = tmp_path / 'sweep'
    argv = ['sweep', '--preset', 'cardano', '--blocks', 1, '--n', 10, '--seeds', 1, '--vary', 'overlay']

    assert run_command(*argv, '--values', 'false', 'true', '--jobs', 1, '--no-plots', '--out', out) == 0

    assert [r['value'] for r in read_csv(out / 'aggregates.csv')] == ['False', 'True']


def test_sweep_invalid_value(tmp_path):
    """
    Assert that a value the knob cannot take is a usage error

    """
    argv = ['sweep', '--preset', 'cardano', '--n', 10, '--vary', 'overlay', '--values', 'maybe']

    assert run_command(*argv, '--out', tmp_path / 'sweep') == 1


def test_fit_without_node_counts(tmp_path):
    """
    Assert that fit needs a node count column

    """
    path = tmp_path / 'in.csv'
    path.write_text('a,b\n1,2\n')

    assert run_command('fit', '--input', path, '--out', tmp_path / 'fit') == 1


def test_table6(tmp_path):
    """
    Assert that table6 writes the Markdown and CSV tables

    """
    out = tmp_path / 'table6'

    assert run_command('table6', '--out', out) == 0

    assert '| Chain | Network |' in (out / 'table6.md').read_text()
    assert len(read_csv(out / 'table6.csv')) == 4 * 3 * 4


def test_table6_dedicated_fits(tmp_path):
    """
    Assert that overlay fits add dedicated network rows

    """
    fits = tmp_path / 'fits.csv'
    fits.write_text(
        'protocol,vary,value,metric,a,b\n'
        'advertisement_based,overlay,True,delta_max_s,0.5,0.1\n'
        'advertisement_based,overlay,False,delta_max_s,3.0,-5.0\n'
        'advertisement_based,overlay,True,delta_avg_s,0.2,0.1\n'
    )
    out = tmp_path / 'table6'

    assert run_command('table6', '--dedicated-fits', fits, '--out', out) == 0

    dedicated = [r for r in read_csv(out / 'table6.csv') if r['network'] == 'dedicated']
    assert {r['chain'] for r in dedicated} == {'cardano'}
    assert len(dedicated) == 12


def test_fig1(tmp_path):
    """
    Assert that fig1 writes the curve, its summary and the figure

    """
    out = tmp_path / 'fig1'

    assert run_command('fig1', '--n-max', 10**5, '--out', out) == 0

    summary = read_csv(out / 'fig1_summary.csv')
    assert summary[0]['quantity'] == 'turnaround'
    assert (out / 'fig1.png').exists()


def test_frontier_curves_and_rates(tmp_path):
    """
    Assert that the analytical commands write their tables

    """
    assert run_command('frontier', '--chains', 'cardano', '--n', 100, 1000, '--out', tmp_path / 'f') == 0
    assert run_command('curves', '--chains', 'monero', '--n-max', 1000, '--no-plots', '--out', tmp_path / 'c') == 0
    assert run_command('rates', '--n-val', 100, '--p-star', 0.1, '--delta', 10, '--no-plots', '--out', tmp_path / 'r') == 0

    kinds = {r['kind'] for r in read_csv(tmp_path / 'f' / 'frontier.csv')}
    assert kinds == {'tolerable', 'regression'}
    assert len(read_csv(tmp_path / 'c' / 'turnarounds.csv')) == 3
    assert read_csv(tmp_path / 'r' / 'rates.csv')


def test_validate_config(tmp_path):
    """
    Assert that validate-config accepts good files and rejects bad ones

    """
    good = tmp_path / 'good.yaml'
    good.write_text(CONFIG)
    bad = tmp_path / 'bad.yaml'
    bad.write_text(CONFIG.replace('direct_push', 'flooding'))

    binary = tmp_path / 'binary.yaml'
    binary.write_bytes(b'scenario:\n  seed: \xff\xfe\n')

    assert run_command('validate-config', good) == 0
    assert run_command('validate-config', bad) == 1
    assert run_command('validate-config', tmp_path / 'missing.yaml') == 1
    assert run_command('validate-config', binary) == 1
