"""Parameter estimation from metered consumption data.

Seasonality is the per-slot mean over days of the cross-meter average.
Volatilities come from relative increments of the seasonality-normalized
series z = x / seasonality:

    rho_k = (z_{k+1} - z_k * (1 + dt * mu_hat)) / z_k,
    mu_hat from the mean relative increment, sigma_hat = std(rho) / sqrt(dt);

the common volatility uses the cross-meter average series, the total per-meter
volatility uses every meter's series, and the idiosyncratic volatility is
sqrt(total^2 - common^2) floored at zero.  This is consistent with the
multiplicative consumption dynamics and is validated by recovery from
simulated panels.  The price curve is ordinary least squares of price on
demand.  Units are user-declared metadata and are never converted.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import ConfigError, RefusalError


@dataclass(frozen=True)
class FormatSpec:
    """Column layout for long-format readings (one row per meter and slot).

    The timestamp column may hold ISO-8601 timestamps (slot position is
    derived from the time of day) or integer slot indices with a separate
    date column.  day_filter keeps all days, weekdays or weekends; filtering
    happens before panel assembly."""

    timestamp_col: str
    meter_col: str
    value_col: str
    slot_count: int = 48
    delimiter: str = ","
    day_filter: str = "all"
    max_bad_fraction: float = 0.05

    def __post_init__(self):
        if self.slot_count < 2:
            raise ConfigError("slot_count must be >= 2")
        if self.day_filter not in ("all", "weekday", "weekend"):
            raise ConfigError("day_filter must be all, weekday or weekend")


@dataclass
class ConsumptionPanel:
    """Complete day x slot x meter block of kW readings."""

    values: np.ndarray
    meters: list
    days: list
    dropped_rows: int
    dropped_days: int

    @property
    def day_count(self):
        return self.values.shape[0]

    @property
    def slot_count(self):
        return self.values.shape[1]

    @property
    def meter_count(self):
        return self.values.shape[2]


@dataclass
class CalibrationResult:
    seasonality: np.ndarray
    sigma0_hat: float
    sigma_hat: float | None
    sigma_st_hat: float
    p0_hat: float | None = None
    p1_hat: float | None = None


def _slot_of(ts, slot_count):
    t = datetime.fromisoformat(ts)
    seconds = t.hour * 3600 + t.minute * 60 + t.second
    slot = seconds * slot_count // 86400
    return t.date(), slot


def ingest_csv(path, fmt):
    """Read a long-format delimited file into a complete panel.

    Malformed rows are dropped (tolerated up to max_bad_fraction, else the
    ingest fails and names the offending lines); (day, slot, meter) cells
    never observed make the whole day incomplete, and incomplete days are
    dropped and counted."""
    cells = {}
    meters = set()
    days = set()
    bad_lines = []
    total = 0
    with open(path, newline="") as f:
        reader = csv.DictReader(f, delimiter=fmt.delimiter)
        if reader.fieldnames is None or not {fmt.timestamp_col, fmt.meter_col, fmt.value_col} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: missing required columns "
                              f"({fmt.timestamp_col}, {fmt.meter_col}, {fmt.value_col})")
        for lineno, row in enumerate(reader, start=2):
            total += 1
            try:
                day, slot = _slot_of(row[fmt.timestamp_col], fmt.slot_count)
                value = float(row[fmt.value_col])
                meter = row[fmt.meter_col]
                if meter is None or meter == "" or not math.isfinite(value):
                    raise ValueError("empty meter or non-finite value")
            except (ValueError, TypeError, KeyError):
                bad_lines.append(lineno)
                continue
            if fmt.day_filter == "weekday" and day.weekday() >= 5:
                continue
            if fmt.day_filter == "weekend" and day.weekday() < 5:
                continue
            cells[(day, slot, meter)] = value
            meters.add(meter)
            days.add(day)
    if total == 0:
        raise ConfigError(f"{path}: no data rows")
    if len(bad_lines) > fmt.max_bad_fraction * total:
        shown = ", ".join(str(x) for x in bad_lines[:20])
        raise ConfigError(f"{path}: {len(bad_lines)} malformed rows (lines {shown}...)")
    meters = sorted(meters)
    complete_days = [d for d in sorted(days)
                     if all((d, s, m) in cells for s in range(fmt.slot_count) for m in meters)]
    dropped_days = len(days) - len(complete_days)
    if not complete_days:
        raise ConfigError(f"{path}: no complete days after dropping gaps")
    values = np.empty((len(complete_days), fmt.slot_count, len(meters)))
    for i, d in enumerate(complete_days):
        for s in range(fmt.slot_count):
            for j, m in enumerate(meters):
                values[i, s, j] = cells[(d, s, m)]
    return ConsumptionPanel(values=values, meters=meters, days=complete_days,
                            dropped_rows=len(bad_lines), dropped_days=dropped_days)


def estimate_seasonality(panel):
    """Per-slot mean over days of the per-slot cross-meter average."""
    return panel.values.mean(axis=2).mean(axis=0)


def _relative_vol(series, dt):
    """Pooled relative-increment volatility of a (paths, slots) block."""
    x = np.asarray(series, dtype=float)
    g = (x[:, 1:] - x[:, :-1]) / x[:, :-1]
    mu_hat = g.mean() / dt
    resid = (x[:, 1:] - x[:, :-1] * (1.0 + dt * mu_hat)) / x[:, :-1]
    return float(np.std(resid.ravel(), ddof=1) / math.sqrt(dt))


def estimate_volatilities(panel, seasonality, dt):
    """(sigma0_hat, sigma_hat) from seasonality-normalized increments.

    sigma_hat is None with a single meter; the cross-meter estimate then
    captures the total volatility."""
    if np.any(seasonality <= 0):
        raise RefusalError("seasonality must be strictly positive to normalize")
    z = panel.values / seasonality[None, :, None]
    zbar = z.mean(axis=2)
    sigma0 = _relative_vol(zbar, dt)
    if panel.meter_count < 2:
        return sigma0, None
    per_meter = np.concatenate([z[:, :, j] for j in range(panel.meter_count)], axis=0)
    total = _relative_vol(per_meter, dt)
    sigma = math.sqrt(max(total * total - sigma0 * sigma0, 0.0))
    return sigma0, sigma


def fit_price_curve(demand_price_pairs):
    """Ordinary least squares of price on demand: (p0_hat, p1_hat)."""
    pairs = np.asarray(demand_price_pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 2:
        raise ConfigError("need at least two (demand, price) pairs")
    demand, price = pairs[:, 0], pairs[:, 1]
    if np.ptp(demand) == 0:
        raise ConfigError("degenerate design: all demand values equal")
    design = np.column_stack([np.ones_like(demand), demand])
    coef, *_ = np.linalg.lstsq(design, price, rcond=None)
    return float(coef[0]), float(coef[1])


def calibrate(panel, dt, demand_price_pairs=None):
    seasonality = estimate_seasonality(panel)
    sigma0, sigma = estimate_volatilities(panel, seasonality, dt)
    p0 = p1 = None
    if demand_price_pairs is not None:
        p0, p1 = fit_price_curve(demand_price_pairs)
    return CalibrationResult(seasonality=seasonality, sigma0_hat=sigma0,
                             sigma_hat=sigma, sigma_st_hat=sigma0,
                             p0_hat=p0, p1_hat=p1)


def write_result(result, fileobj):
    """key = value form, consumable as a scenario calibration input."""
    fileobj.write("model.sigma0 = %.17g\n" % result.sigma0_hat)
    fileobj.write("model.sigma_st = %.17g\n" % result.sigma_st_hat)
    if result.sigma_hat is not None:
        fileobj.write("model.sigma = %.17g\n" % result.sigma_hat)
    if result.p0_hat is not None:
        fileobj.write("model.p0 = %.17g\n" % result.p0_hat)
        fileobj.write("model.p1 = %.17g\n" % result.p1_hat)


def read_result(path):
    """Parse a calibration key = value file into a dict of scenario overrides."""
    out = {}
    allowed = {"model.sigma0", "model.sigma_st", "model.sigma", "model.p0", "model.p1"}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in allowed:
                raise ConfigError(f"{path}:{lineno}: unknown calibration key {key!r}")
            out[key] = float(value.strip())
    return out


def write_seasonality_csv(seasonality, fileobj):
    w = csv.writer(fileobj)
    w.writerow(["slot", "mean_kw"])
    for s, v in enumerate(seasonality):
        w.writerow([s, "%.17g" % v])
