"""Deterministic SVG rendering of trajectory CSVs.

Figures go through the Agg backend with a fixed hash salt and no embedded
date, so a given input produces byte-identical SVG output.  Activation
windows (maximal runs of J = 1) are shaded and tagged with stable element
ids (jump-shade-<i>), one per run; each plotted series carries the id
series-<column>.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError

_RC = {"svg.hashsalt": "dsmfg", "figure.figsize": (8.0, 4.5), "figure.dpi": 100}


def read_table(path):
    """Read any of the package's delimited outputs into {column: array}."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    cols = {}
    data = np.array(rows, dtype=object)
    for i, name in enumerate(header):
        try:
            cols[name] = np.asarray(data[:, i], dtype=float)
        except ValueError:
            cols[name] = data[:, i]
    return cols


def j_runs(t, j):
    """Maximal runs of J = 1 as (t_start, t_end) pairs."""
    runs = []
    start = None
    for i, flag in enumerate(j):
        if flag > 0 and start is None:
            start = i
        elif flag <= 0 and start is not None:
            runs.append((t[start], t[i - 1]))
            start = None
    if start is not None:
        runs.append((t[start], t[-1]))
    return runs


def render_timeseries(table, y_columns, out_path, shade_j=True, title=None,
                      x_column="t"):
    """Plot the named columns against time and write an SVG file."""
    if x_column not in table:
        raise ConfigError(f"missing column {x_column!r}")
    for col in y_columns:
        if col not in table:
            raise ConfigError(f"unknown column {col!r}; available: {sorted(table)}")
    t = table[x_column]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        if shade_j and "J" in table:
            for i, (t0, t1) in enumerate(j_runs(t, table["J"])):
                ax.axvspan(t0, t1, color="0.88", zorder=0, gid=f"jump-shade-{i}")
        for col in y_columns:
            line, = ax.plot(t, table[col], label=col)
            line.set_gid(f"series-{col}")
        ax.set_xlabel("time (hours)")
        ax.legend(loc="best")
        if title:
            ax.set_title(title)
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
