# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Sweeps, delay regressions and the analytical reproduction pipelines.

Simulation sweeps run in a process pool, one isolated run per worker task.
The analytical pipelines (adversarial power table, security curves, delay
frontier) use the reference delay regressions shipped in `REFERENCE_FITS`;
fits derived from our own sweeps are reported next to them, never
substituted for them.
"""

import logging
import math
import os

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from scipy import stats

import nakasim.error as error
import nakasim.secmath as secmath

from nakasim.model import Protocol
from nakasim.netmodel import build_topology
from nakasim.scenario import KNOBS, PRESETS, ScenarioConfig, override
from nakasim.secmath import LogFit
from nakasim.simengine import run


logger = logging.getLogger(__name__)


class ChainFits(NamedTuple):
    """Reference regressions `(a, b)` of a chain's maximum and average delay."""

    delta_max: LogFit
    delta_avg: LogFit


# fmt: off
# Delay regressions Δ(n) = a*ln(n) + b (seconds) over the number of nodes
REFERENCE_FITS: Dict[str, ChainFits] = {
    'bitcoin':          ChainFits(delta_max=(0.1, -0.04),  delta_avg=(0.04, 0.03)),
    'monero':           ChainFits(delta_max=(1.18, -2.24), delta_avg=(0.43, 0.26)),
    'cardano':          ChainFits(delta_max=(3.65, -7.37), delta_avg=(0.41, 1.3)),
    'ethereum_classic': ChainFits(delta_max=(2.6, -8.71),  delta_avg=(0.42, 0.3)),
}
# fmt: on

CHAINS: Tuple[str, ...] = ('bitcoin', 'monero', 'cardano', 'ethereum_classic')

TABLE6_N: Tuple[int, ...] = (10, 10**3, 10**6, 10**9)
TABLE6_DELAY_BLOCKS: Tuple[int, ...] = (0, 1, 5)

FIG1_CHECKPOINTS: Tuple[int, ...] = (10, 20_000, 10**6)

METRICS: Tuple[str, ...] = ('delta_max_s', 'delta_avg_s', 'delta_p90_s')

# Grouping columns of sweep rows, besides the node count
GROUP_COLUMNS: Tuple[str, ...] = ('protocol', 'vary', 'value')

# fmt: off
SWEEP_COLUMNS = [
    'vary', 'value', 'n_val', 'n_zp', 'n', 'protocol', 'seed', 'status',
    'delta_max_s', 'delta_avg_s', 'delta_p90_s', 'stale_rate',
    'blocks', 'events', 'trace_digest', 'error',
]

AGGREGATE_COLUMNS = [
    'vary', 'value', 'n_val', 'n_zp', 'n', 'protocol', 'runs', 'failed',
    'delta_max_s', 'delta_avg_s', 'delta_p90_s', 'stale_rate',
]
# fmt: on


def chain_rate(chain: str) -> float:
    """Return the block rate (blocks per second) of a chain preset."""
    if chain not in PRESETS:
        raise error.NakaConfigError('Unknown chain %r' % chain)
    return 1.0 / PRESETS[chain][0]


@dataclass(frozen=True)
class RegressionFit:
    """Least-squares fit of a delay against the natural log of the node count.

    Attributes:
        a: Slope, in seconds per unit of `ln(n)`.
        b: Intercept, in seconds.
        r_squared: Coefficient of determination, in `[0, 1]`.
        points: The fitted `(n, delay)` pairs.
    """

    a: float
    b: float
    r_squared: float
    points: Tuple[Tuple[float, float], ...] = ()

    @property
    def fit(self) -> LogFit:
        """The pair `(a, b)`."""
        return (self.a, self.b)

    def predict(self, n: float) -> float:
        """Return `a*ln(n) + b`."""
        return self.a * math.log(n) + self.b


def fit_log_regression(points: Sequence[Tuple[float, float]]) -> RegressionFit:
    """Fit `delay = a*ln(n) + b` by ordinary least squares.

    Args:
        points: Pairs `(n, delay_s)` with `n >= 2`.

    Returns:
        A `RegressionFit`.

    Raises:
        NakaFitError: If fewer than 3 points are given, a node count is below
            2 or all node counts are equal.

    Examples:
        >>> f = fit_log_regression([(n, 2 * math.log(n) + 1) for n in (10, 100, 1000)])
        >>> round(f.a, 9), round(f.b, 9), round(f.r_squared, 9)
        (2.0, 1.0, 1.0)
    """
    pts = tuple((float(n), float(d)) for n, d in points)
    if len(pts) < 3:
        raise error.NakaFitError('At least 3 points are needed (got %d)' % len(pts))
    if any(n < 2 for n, _ in pts):
        raise error.NakaFitError('Node counts must be >= 2')

    x = np.log([n for n, _ in pts])
    y = np.array([d for _, d in pts])
    if np.ptp(x) == 0.0:
        raise error.NakaFitError('Node counts must not all be equal')

    res = stats.linregress(x, y)

    residuals = y - (res.slope * x + res.intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(residuals**2)) / ss_tot

    return RegressionFit(
        a=float(res.slope),
        b=float(res.intercept),
        r_squared=min(1.0, max(0.0, r_squared)),
        points=pts,
    )


# Sweeps
# =====================================================================


@dataclass(frozen=True)
class SweepSpec:
    """A grid of simulation runs.

    Every node count in `n_values` is combined with every value of the
    `vary` knob (if it is not `n`) and every seed.

    Attributes:
        base: Scenario every point starts from.
        n_values: Validator counts.
        seeds: Seeds; each seed builds its own topology.
        vary: Knob swept next to the node count (see `scenario.KNOBS`).
        values: Values of the `vary` knob.
    """

    base: ScenarioConfig
    n_values: Tuple[int, ...]
    seeds: Tuple[int, ...]
    vary: str = 'n'
    values: Tuple[Any, ...] = field(default_factory=tuple)

    def __post_init__(self):
        """Freeze the lists and check the grid is not empty."""
        object.__setattr__(self, 'n_values', tuple(self.n_values))
        object.__setattr__(self, 'seeds', tuple(self.seeds))
        object.__setattr__(self, 'values', tuple(self.values))

        if not self.n_values or not self.seeds:
            raise error.NakaConfigError('A sweep needs at least one node count and one seed')
        if self.vary not in KNOBS:
            raise error.NakaConfigError('Unknown sweep knob %r' % self.vary)
        if self.vary not in ('n', 'n_val') and not self.values:
            raise error.NakaConfigError('Sweeping %r needs at least one value' % self.vary)

    def points(self) -> List[Tuple[int, Any]]:
        """Return the `(n_val, value)` pairs of the grid; `value` is None for an `n` sweep."""
        if self.vary in ('n', 'n_val'):
            return [(n, None) for n in self.n_values]
        return [(n, v) for n in self.n_values for v in self.values]

    def config_for(self, n_val: int, value: Any, seed: int) -> ScenarioConfig:
        """Return the validated scenario of one grid point."""
        cfg = override(self.base, 'n_val', n_val)
        if value is not None:
            cfg = override(cfg, self.vary, value)
        return override(cfg, 'seed', seed).validate()


class SweepResult(NamedTuple):
    """Per-run rows and per-point aggregates of a sweep."""

    rows: List[Dict[str, Any]]
    aggregates: List[Dict[str, Any]]


def _value_label(value: Any) -> Any:
    if isinstance(value, Protocol):
        return value.value
    if value is None:
        return ''
    return value


def _point_row(spec_vary: str, value: Any, cfg: ScenarioConfig) -> Dict[str, Any]:
    return {
        'vary': spec_vary,
        'value': _value_label(value),
        'n_val': cfg.n_val,
        'n_zp': cfg.n_zp,
        'n': cfg.n,
        'protocol': cfg.protocol.value,
    }


def _run_point(task: Tuple[int, int, str, Any, ScenarioConfig]) -> Dict[str, Any]:
    """Run one grid point; failures become rows instead of exceptions."""
    index, seed, vary, value, cfg = task

    row = _point_row(vary, value, cfg)
    row.update({'seed': seed, 'error': '', '_index': index})
    try:
        metrics = run(cfg, build_topology(cfg, seed), seed)
    except error.NakaError as e:
        row.update({'status': 'failed', 'error': '{0}: {1}'.format(type(e).__name__, e)})
        return row

    row.update(
        {
            'status': 'partial' if metrics.partial else 'ok',
            'delta_max_s': metrics.delta_max_s,
            'delta_avg_s': metrics.delta_avg_s,
            'delta_p90_s': metrics.delta_p90_s,
            'stale_rate': metrics.stale_rate,
            'blocks': len(metrics.per_block),
            'events': metrics.events,
            'trace_digest': metrics.trace_digest,
        }
    )
    return row


def _aggregate(rows: List[Dict[str, Any]]) -> Dict[str, Any]:
    first = rows[0]
    agg = {k: first[k] for k in ('vary', 'value', 'n_val', 'n_zp', 'n', 'protocol')}

    ok = [r for r in rows if r['status'] == 'ok']
    agg['runs'] = len(ok)
    agg['failed'] = len(rows) - len(ok)
    for key in METRICS + ('stale_rate',):
        agg[key] = float(np.mean([r[key] for r in ok])) if ok else ''
    return agg


def run_sweep(spec: SweepSpec, jobs: Optional[int] = None) -> SweepResult:
    """Run every point of a sweep for every seed.

    Runs execute in a `ProcessPoolExecutor` with `jobs` workers (all cores by
    default, in-process for `jobs=1`). A failed run is recorded as a row with
    status `failed` and the sweep continues. Rows come back sorted by grid
    point and seed.

    Args:
        spec: The sweep.
        jobs: Maximum number of parallel runs.

    Returns:
        A `SweepResult` with one row per (point, seed) and one aggregate
            (mean over completed runs) per point.
    """
    tasks = []
    for index, (n_val, value) in enumerate(spec.points()):
        for seed in spec.seeds:
            cfg = spec.config_for(n_val, value, seed)
            tasks.append((index, seed, spec.vary, value, cfg))

    workers = jobs or os.cpu_count() or 1
    logger.debug('Sweep over %d runs with %d workers', len(tasks), workers)

    if workers == 1 or len(tasks) == 1:
        rows = [_run_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(_run_point, tasks))

    rows.sort(key=lambda r: (r['_index'], spec.seeds.index(r['seed'])))

    aggregates = []
    by_point: Dict[int, List[Dict[str, Any]]] = {}
    for r in rows:
        by_point.setdefault(r.pop('_index'), []).append(r)
        if r['status'] != 'ok':
            logger.warning('Run n=%s seed=%s %s %s', r['n'], r['seed'], r['status'], r['error'])
    for index in sorted(by_point):
        aggregates.append(_aggregate(by_point[index]))

    return SweepResult(rows=rows, aggregates=aggregates)


def attack_grid(
    base: ScenarioConfig,
    n_values: Sequence[int],
    seeds: Sequence[int],
    nt_delay_ms: int = 600_000,
) -> List[SweepSpec]:
    """Return the attack sweeps over corruption probability and delayed share.

    One sweep per pair of `p_hat` in {0.15, 0.30} and `p_con` in {0.1, 0.5},
    each comparing the four gossip protocols.
    """
    specs = []
    for p_hat in (0.15, 0.30):
        for p_con in (0.1, 0.5):
            cfg = override(base, 'adversary', True)
            cfg = override(cfg, 'p_hat', p_hat)
            cfg = override(cfg, 'p_con', p_con)
            cfg = override(cfg, 'nt_delay_ms', nt_delay_ms)
            specs.append(SweepSpec(cfg, tuple(n_values), tuple(seeds), vary='protocol', values=tuple(Protocol)))
    return specs


def fit_sweep(
    rows: Sequence[Mapping[str, Any]], metrics: Sequence[str] = METRICS
) -> List[Dict[str, Any]]:
    """Fit every metric of a sweep against `ln(n)`, per group.

    Rows are grouped by the columns of `GROUP_COLUMNS` that they carry. Rows
    with a status other than `ok` are skipped. Values may be strings, as read
    back from a CSV file.

    Returns:
        One row per (group, metric) with `a`, `b`, `r_squared` and `points`.

    Raises:
        NakaFitError: If no group could be fitted.
    """
    groups: Dict[Tuple, List[Mapping[str, Any]]] = {}
    for r in rows:
        if r.get('status', 'ok') not in ('ok', None):
            continue
        key = tuple((c, r[c]) for c in GROUP_COLUMNS if c in r)
        groups.setdefault(key, []).append(r)

    fits = []
    for key, members in groups.items():
        for metric in metrics:
            if metric not in members[0]:
                continue
            points = [(float(r['n']), float(r[metric])) for r in members if r[metric] not in ('', None)]
            try:
                f = fit_log_regression(points)
            except error.NakaFitError as e:
                logger.warning('No fit for %s %s: %s', dict(key), metric, e)
                continue
            fits.append({**dict(key), 'metric': metric, 'a': f.a, 'b': f.b, 'r_squared': f.r_squared, 'points': len(points)})

    if not fits:
        raise error.NakaFitError('No group of the sweep could be fitted')
    return fits


# Analytical pipelines
# =====================================================================


def reproduce_table6(
    fits: Optional[Mapping[str, LogFit]] = None,
    n_values: Sequence[int] = TABLE6_N,
    delay_blocks: Sequence[int] = TABLE6_DELAY_BLOCKS,
    dedicated_fits: Optional[Mapping[str, LogFit]] = None,
) -> List[Dict[str, Any]]:
    """Compute the maximum tolerable adversarial power per chain, attack and size.

    The attack delays `k` consecutive blocks, i.e. adds `k / rho` seconds to
    the delay regression of the chain.

    Args:
        fits: Maximum delay regression per chain (reference fits by default).
        n_values: Node counts.
        delay_blocks: Numbers of delayed blocks.
        dedicated_fits: Optional regressions measured with the dedicated
            validator network; reported as extra rows.

    Returns:
        Rows with `chain`, `network`, `delay_blocks`, `delay_s`, `n`,
            `delta_s` and `beta_max`.

    Raises:
        NakaFitError: If a chain has no fit.
    """
    if fits is None:
        fits = {chain: REFERENCE_FITS[chain].delta_max for chain in CHAINS}

    networks = [('public', fits)]
    if dedicated_fits:
        networks.append(('dedicated', dedicated_fits))

    rows = []
    for network, table in networks:
        for chain in CHAINS:
            if chain not in table:
                if network == 'dedicated':
                    continue
                raise error.NakaFitError('No delay regression for %s' % chain)
            rho = chain_rate(chain)
            for k in delay_blocks:
                nt_s = k / rho
                for n in n_values:
                    delta = secmath.adversarial_delay(n, table[chain], nt_s)
                    rows.append(
                        {
                            'chain': chain,
                            'network': network,
                            'delay_blocks': k,
                            'delay_s': nt_s,
                            'n': n,
                            'delta_s': delta,
                            'beta_max': secmath.beta_max(rho, delta),
                        }
                    )
    return rows


class Fig1Result(NamedTuple):
    """Security probability curve, its turnaround point and checkpoint values."""

    curve: List[Dict[str, Any]]
    turnaround: secmath.Turnaround
    checkpoints: Dict[int, float]


def security_curve(
    fit: LogFit,
    rho: float,
    p_star: float,
    nt_max_s: float,
    n_range: Tuple[float, float],
    e: float = 1.0,
    n_zp: int = 0,
    points_per_decade: int = secmath.POINTS_PER_DECADE,
) -> List[Dict[str, Any]]:
    """Return the security probability over a logarithmic grid of validator counts."""
    rows = []
    for n in secmath.log_grid(n_range[0], n_range[1], points_per_decade):
        n = int(n)
        delta = secmath.adversarial_delay(n + n_zp, fit, nt_max_s)
        rows.append(
            {
                'n': n,
                'delta_s': delta,
                'beta_max': secmath.beta_max(rho, delta, e),
                'nakamoto_coefficient': secmath.nakamoto_coefficient(n, rho, delta, e),
                'security_probability': secmath.security_probability(n, p_star, rho, delta, e),
            }
        )
    return rows


def _turnaround_of(curve: List[Dict[str, Any]]) -> secmath.Turnaround:
    # Ties go to the larger network
    best = max(reversed(curve), key=lambda r: r['security_probability'])
    return secmath.Turnaround(n_star=best['n'], p_peak=best['security_probability'])


def reproduce_fig1(
    fit: LogFit = REFERENCE_FITS['cardano'].delta_max,
    rho: float = 1.0 / 20.0,
    p_star: float = 0.125,
    nt_max_s: float = 100.0,
    n_range: Tuple[float, float] = (10, 10**7),
    checkpoints: Sequence[int] = FIG1_CHECKPOINTS,
    points_per_decade: int = secmath.POINTS_PER_DECADE,
) -> Fig1Result:
    """Compute the security probability curve of a chain under a selective delay attack.

    Defaults describe a Cardano-like chain whose blocks can be delayed by
    100 seconds (five block intervals) with a corruption probability of
    0.125.
    """
    curve = security_curve(fit, rho, p_star, nt_max_s, n_range, points_per_decade=points_per_decade)

    checkpoint_values = {}
    for n in checkpoints:
        delta = secmath.adversarial_delay(n, fit, nt_max_s)
        checkpoint_values[n] = secmath.security_probability(n, p_star, rho, delta)

    return Fig1Result(curve=curve, turnaround=_turnaround_of(curve), checkpoints=checkpoint_values)


class CurvesResult(NamedTuple):
    """Security curves of several chains and their turnaround points."""

    rows: List[Dict[str, Any]]
    turnarounds: List[Dict[str, Any]]


def security_curves(
    chains: Sequence[str] = CHAINS,
    p_star_values: Sequence[float] = (0.1, 0.125, 0.15),
    n_range: Tuple[float, float] = (10, 10**7),
    delay_blocks: int = 5,
    n_zp: int = 0,
    points_per_decade: int = secmath.POINTS_PER_DECADE,
) -> CurvesResult:
    """Compute security curves per chain and corruption probability.

    Each chain uses its reference maximum delay regression plus a selective
    delay of `delay_blocks` block intervals. Zero-power nodes add to the
    delay but not to the validator count.
    """
    rows, turnarounds = [], []
    for chain in chains:
        rho = chain_rate(chain)
        fit = REFERENCE_FITS[chain].delta_max
        for p_star in p_star_values:
            curve = security_curve(
                fit, rho, p_star, delay_blocks / rho, n_range, n_zp=n_zp, points_per_decade=points_per_decade
            )
            rows.extend({'chain': chain, 'p_star': p_star, **r} for r in curve)

            t = _turnaround_of(curve)
            turnarounds.append({'chain': chain, 'p_star': p_star, 'n_star': t.n_star, 'p_peak': t.p_peak})
    return CurvesResult(rows=rows, turnarounds=turnarounds)


def rate_sweep(
    n_val: int,
    p_star: float,
    delta_s: float,
    rho_range: Tuple[float, float] = (1e-3, 1.0),
    e: float = 1.0,
    points_per_decade: int = secmath.POINTS_PER_DECADE,
) -> List[Dict[str, Any]]:
    """Return the security probability over a logarithmic grid of block rates.

    Raises:
        NakaDomainError: If the rate range is empty or not positive.
    """
    lo, hi = rho_range
    if not 0 < lo <= hi:
        raise error.NakaDomainError('Invalid rate range [%r, %r]' % (lo, hi))

    num = max(2, int(math.ceil(math.log10(hi / lo) * points_per_decade)) + 1)
    rows = []
    for rho in np.logspace(math.log10(lo), math.log10(hi), num):
        rho = float(rho)
        rows.append(
            {
                'rho': rho,
                'block_interval_s': 1.0 / rho,
                'beta_max': secmath.beta_max(rho, delta_s, e),
                'nakamoto_coefficient': secmath.nakamoto_coefficient(n_val, rho, delta_s, e),
                'security_probability': secmath.security_probability(n_val, p_star, rho, delta_s, e),
            }
        )
    return rows


def max_delay_frontier(
    chains: Sequence[str] = CHAINS,
    p_star_values: Sequence[float] = (0.0, 0.05, 0.1, 0.125),
    n_grid: Sequence[int] = (10, 100, 1000, 10**4, 10**5, 10**6),
    target: float = 0.9,
    simulated: Optional[Mapping[str, Sequence[Tuple[int, float]]]] = None,
) -> List[Dict[str, Any]]:
    """Compute the largest delay that keeps the security probability at the target.

    Rows of kind `tolerable` hold the frontier per (chain, p*, n). Rows of
    kind `regression` hold the chain's benign maximum delay at the same n,
    and rows of kind `simulated` any measured maximum delays passed in, so
    that both can be compared against the frontier.

    Returns:
        Rows with `chain`, `kind`, `p_star`, `n`, `delay_s` and `status`.
    """
    rows = []
    for chain in chains:
        rho = chain_rate(chain)
        for p_star in p_star_values:
            for n in n_grid:
                result = secmath.max_tolerable_delay(int(n), p_star, rho, target=target)
                rows.append(
                    {
                        'chain': chain,
                        'kind': 'tolerable',
                        'p_star': p_star,
                        'n': int(n),
                        'delay_s': result.delay_s,
                        'status': result.status,
                    }
                )

        fit = REFERENCE_FITS[chain].delta_max
        for n in n_grid:
            rows.append(
                {
                    'chain': chain,
                    'kind': 'regression',
                    'p_star': '',
                    'n': int(n),
                    'delay_s': secmath.adversarial_delay(int(n), fit),
                    'status': '',
                }
            )

        for n, delay in (simulated or {}).get(chain, ()):
            rows.append(
                {'chain': chain, 'kind': 'simulated', 'p_star': '', 'n': int(n), 'delay_s': float(delay), 'status': ''}
            )
    return rows
