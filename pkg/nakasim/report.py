# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Output artifacts: per-invocation directories, CSV files, tables and manifests."""

import csv
import json
import logging
import os
import sys

from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Union

import nakasim.error as error

from nakasim.simengine import RunMetrics


logger = logging.getLogger(__name__)

# Environment variable overriding the root of output directories
OUT_ROOT_ENV = 'NAKASIM_OUT_ROOT'
DEFAULT_OUT_ROOT = 'results'

MANIFEST_NAME = 'manifest.json'

# Packages whose versions are recorded in the manifest
MANIFEST_PACKAGES = ('nakasim', 'numpy', 'scipy', 'networkx', 'PyYAML', 'matplotlib')

# fmt: off
RUN_COLUMNS = [
    'run', 'seed', 'blocks', 'delta_max_s', 'delta_avg_s', 'delta_p90_s',
    'stale_rate', 'partial', 'events', 'end_ms', 'trace_digest',
]

RECEPTION_COLUMNS = [
    'run', 'block', 'height', 'miner', 'node', 'created_at_ms', 'reception_ms', 'latency_ms', 'stale',
]

TABLE6_COLUMNS = ['chain', 'network', 'delay_blocks', 'delay_s', 'n', 'delta_s', 'beta_max']
# fmt: on

PathLike = Union[str, Path]


def output_dir(command: str, out: Optional[PathLike] = None) -> Path:
    """Create the output directory of one invocation.

    With `out`, that directory is used; it must not exist or be empty. Without
    it, a new `<command>-<timestamp>` directory is created below
    `$NAKASIM_OUT_ROOT` (or `./results`).

    Raises:
        NakaUsageError: If `out` already holds files.
    """
    if out is not None:
        path = Path(out)
        if path.exists() and any(path.iterdir()):
            raise error.NakaUsageError('Output directory %s is not empty' % path)
        path.mkdir(parents=True, exist_ok=True)
        return path

    root = Path(os.environ.get(OUT_ROOT_ENV) or DEFAULT_OUT_ROOT)
    stamp = datetime.now().strftime('%Y%m%d-%H%M%S')
    path = root / ('%s-%s' % (command, stamp))
    suffix = 1
    while path.exists():
        path = root / ('%s-%s-%d' % (command, stamp, suffix))
        suffix += 1

    path.mkdir(parents=True)
    return path


def write_csv(path: PathLike, rows: Iterable[Mapping[str, Any]], columns: Sequence[str]) -> Path:
    """Write rows to a CSV file with a fixed header; missing values stay empty."""
    path = Path(path)
    with path.open('w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction='ignore', lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow(row)

    logger.debug('Wrote %s', path)
    return path


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    """Read a CSV file into a list of rows.

    Raises:
        NakaUsageError: If the file cannot be read.
    """
    try:
        with Path(path).open(newline='', encoding='utf-8') as f:
            return list(csv.DictReader(f))
    except OSError as e:
        raise error.NakaUsageError('Unable to read %s: %s' % (path, e)) from e


def run_rows(runs: Sequence[RunMetrics]) -> List[Dict[str, Any]]:
    """Return one summary row per run."""
    return [{'run': i, **m.summary_row()} for i, m in enumerate(runs)]


def reception_rows(runs: Sequence[RunMetrics]) -> Iterator[Dict[str, Any]]:
    """Yield one row per (run, block, node) with the reception time of the block."""
    for i, m in enumerate(runs):
        for record in m.per_block:
            b = record.block
            for node, at in enumerate(record.receptions.tolist()):
                yield {
                    'run': i,
                    'block': b.id,
                    'height': b.height,
                    'miner': b.miner,
                    'node': node,
                    'created_at_ms': b.created_at_ms,
                    'reception_ms': at if at >= 0 else '',
                    'latency_ms': at - b.created_at_ms if at >= 0 else '',
                    'stale': record.stale,
                }


def markdown_table6(rows: Sequence[Mapping[str, Any]]) -> str:
    """Render adversarial power rows as a Markdown table, one column per node count."""
    ns = sorted({r['n'] for r in rows})
    keys = []
    cells: Dict[tuple, Dict[int, float]] = {}
    for r in rows:
        key = (r['chain'], r['network'], r['delay_blocks'], r['delay_s'])
        if key not in cells:
            keys.append(key)
            cells[key] = {}
        cells[key][r['n']] = r['beta_max']

    header = ['Chain', 'Network', 'Delay'] + ['n=%s' % _power_label(n) for n in ns]
    lines = [
        '| ' + ' | '.join(header) + ' |',
        '|' + '|'.join('---' for _ in header) + '|',
    ]
    for chain, network, blocks, delay_s in keys:
        delay = '0 s' if blocks == 0 else '%g s (%d block%s)' % (delay_s, blocks, '' if blocks == 1 else 's')
        values = ['%.4f' % cells[(chain, network, blocks, delay_s)][n] for n in ns]
        lines.append('| ' + ' | '.join([chain, network, delay] + values) + ' |')
    return '\n'.join(lines) + '\n'


def _power_label(n: int) -> str:
    exponent = len(str(n)) - 1
    if n >= 1000 and n == 10**exponent:
        return '10^%d' % exponent
    return str(n)


def _version(package: str) -> str:
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return 'unknown'


def write_manifest(
    directory: PathLike,
    command: str,
    argv: Sequence[str],
    seeds: Sequence[int] = (),
    config_hash: Optional[str] = None,
    artifacts: Sequence[str] = (),
    exit_code: int = 0,
) -> Path:
    """Write the reproducibility manifest of an invocation.

    The manifest is the only artifact carrying a timestamp.
    """
    manifest = {
        'command': command,
        'argv': list(argv),
        'seeds': list(seeds),
        'config_hash': config_hash,
        'artifacts': sorted(artifacts),
        'exit_code': exit_code,
        'versions': {p: _version(p) for p in MANIFEST_PACKAGES},
        'python': sys.version.split()[0],
        'created_at': datetime.now(timezone.utc).isoformat(timespec='seconds'),
    }

    path = Path(directory) / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path
