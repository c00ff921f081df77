# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Line charts on a logarithmic x axis, written next to the CSV files.

Plots are a convenience; the CSV files hold the results.
"""

from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402


Series = Mapping[str, Tuple[Sequence[float], Sequence[float]]]


def line_chart(
    path: Path,
    series: Series,
    xlabel: str,
    ylabel: str,
    title: str = '',
    logx: bool = True,
    logy: bool = False,
) -> Path:
    """Draw one line per series and save the figure."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker='.', label=label)

    if logx:
        ax.set_xscale('log')
    if logy:
        ax.set_yscale('log')
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which='both', alpha=0.3)
    if len(series) > 1:
        ax.legend(fontsize='small')

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def group_series(
    rows: Sequence[Mapping[str, Any]], by: Sequence[str], x: str, y: str
) -> Dict[str, Tuple[List[float], List[float]]]:
    """Split rows into series labelled by the values of the `by` columns."""
    series: Dict[str, Tuple[List[float], List[float]]] = {}
    for r in rows:
        if r.get(y) in ('', None):
            continue
        label = ', '.join('%s=%s' % (k, r[k]) for k in by) if by else y
        xs, ys = series.setdefault(label, ([], []))
        xs.append(float(r[x]))
        ys.append(float(r[y]))
    return series
