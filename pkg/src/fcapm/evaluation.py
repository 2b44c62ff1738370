"""Goodness of fit, expanding-window forecasts, group t-tests and sector tables."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .basis import quad_weights
from .methods import METHODS, MethodConfig, StockData, fit_predict

log = logging.getLogger(__name__)

STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))

# GICS sector order used for report rows
GICS_SECTORS = (
    "Energy",
    "Materials",
    "Industrials",
    "Consumer Discretionary",
    "Consumer Staples",
    "Health Care",
    "Financials",
    "Information Technology",
    "Communication Services",
    "Utilities",
    "Real Estate",
)


class EvaluationError(ValueError):
    pass


# ------------------------------------------------------------- fit metrics


@dataclass(frozen=True, eq=False)
class FitMetrics:
    """Pointwise R^2 and RMSE curves; R^2 is NaN where it is undefined."""

    r2_curve: np.ndarray
    rmse_curve: np.ndarray
    r2_total: float
    rmse_total: float


def fit_metrics(observed, fitted, grid=None) -> FitMetrics:
    """R^2(v) = 1 - SSE(v)/SST(v) and RMSE(v) = sqrt(SSE(v)/n) per grid column.

    The first column (the open, identically zero for CIDR data) and any
    column with zero total sum of squares are left out of ``r2_total``,
    which is the plain mean of the remaining R^2 values. ``rmse_total`` is
    the trapezoidal integral of the RMSE curve.
    """
    obs = np.asarray(observed, dtype=float)
    fit = np.asarray(fitted, dtype=float)
    if obs.shape != fit.shape or obs.ndim != 2:
        raise EvaluationError(f"observed {obs.shape} and fitted {fit.shape} must be equal 2-d shapes")
    n = obs.shape[0]
    sse = np.sum((obs - fit) ** 2, axis=0)
    sst = np.sum((obs - obs.mean(axis=0)) ** 2, axis=0)
    valid = sst > 0
    r2 = np.full(obs.shape[1], np.nan)
    r2[valid] = 1.0 - sse[valid] / sst[valid]
    used = valid.copy()
    used[0] = False
    skipped = np.flatnonzero(~valid[1:]) + 1
    if skipped.size:
        log.warning("R^2 undefined (zero SST) at grid columns %s; excluded from r2_total", skipped.tolist())
    r2_total = float(np.mean(r2[used])) if used.any() else math.nan
    rmse = np.sqrt(sse / n)
    g = np.linspace(0.0, 1.0, obs.shape[1]) if grid is None else np.asarray(grid)
    return FitMetrics(r2, rmse, r2_total, float(quad_weights(g) @ rmse))


# ---------------------------------------------------------------- forecasts


@dataclass(frozen=True, eq=False)
class ForecastRecord:
    index: int
    date: dt.date
    predicted: np.ndarray
    realized: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return self.predicted - self.realized


@dataclass(frozen=True, eq=False)
class ForecastMetrics:
    rmspe_curve: np.ndarray
    rmspe_total: float
    n_train: int
    n_test: int
    n_failed: int = 0
    failures: tuple = ()


Estimator = Callable[[StockData, np.ndarray, np.ndarray], np.ndarray]


def _as_estimator(estimator, cfg: MethodConfig | None) -> Estimator:
    if callable(estimator):
        return estimator
    return lambda data, train, test: fit_predict(estimator, data, train, test, cfg)


def rmspe(records: Sequence[ForecastRecord], grid) -> tuple[np.ndarray, float]:
    err = np.array([r.errors for r in records])
    curve = np.sqrt(np.mean(err**2, axis=0))
    return curve, float(quad_weights(grid) @ curve)


def expanding_window(
    data: StockData, estimator, n_train: int = 200, cfg: MethodConfig | None = None
) -> tuple[ForecastMetrics, list[ForecastRecord]]:
    """Refit on days 0..z-1 and predict day z, for z = n_train .. n_days-1.

    ``estimator`` is a method name or a callable ``(data, train_rows,
    test_rows) -> predicted curves``. A window whose fit raises is logged,
    skipped and counted.
    """
    n = data.n_days
    if not 1 <= n_train < n:
        raise EvaluationError(f"n_train must lie in [1, {n - 1}], got {n_train}")
    run = _as_estimator(estimator, cfg)
    records, failures = [], []
    for z in range(n_train, n):
        try:
            pred = np.asarray(run(data, np.arange(z), np.array([z])), dtype=float)[0]
            if not np.all(np.isfinite(pred)):
                raise EvaluationError("non-finite prediction")
        except Exception as exc:  # per-window failures are part of the protocol
            log.warning("%s: window %d (%s) failed: %s", data.symbol, z, data.x.dates[z], exc)
            failures.append((z, str(exc)))
            continue
        records.append(ForecastRecord(z, data.x.dates[z], pred, data.y.curves[z].copy()))
    if records:
        curve, total = rmspe(records, data.y.grid)
    else:
        curve, total = np.full(data.y.curves.shape[1], np.nan), math.nan
    metrics = ForecastMetrics(curve, total, n_train, len(records), len(failures), tuple(failures))
    return metrics, records


# ------------------------------------------------------------------ t-tests


@dataclass(frozen=True)
class GroupTest:
    group_high_mean: float
    group_low_mean: float
    t_statistic: float
    p_value: float
    significance_stars: str


def stars(p: float) -> str:
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return ""


def two_sample_t(values_high, values_low) -> GroupTest:
    """Welch's unequal-variance t-test, two-sided."""
    hi = np.asarray(values_high, dtype=float)
    lo = np.asarray(values_low, dtype=float)
    if hi.size < 2 or lo.size < 2:
        raise EvaluationError(f"each group needs at least 2 values, got {hi.size} and {lo.size}")
    mh, ml = float(hi.mean()), float(lo.mean())
    if np.var(hi) == 0 and np.var(lo) == 0:
        if mh == ml:
            t, p = 0.0, 1.0
        else:
            t, p = math.copysign(math.inf, mh - ml), 0.0
    else:
        res = stats.ttest_ind(hi, lo, equal_var=False)
        t, p = float(res.statistic), float(res.pvalue)
    return GroupTest(mh, ml, t, p, stars(p))


def decile_groups(values: dict[str, float], fraction: float = 0.1) -> tuple[list[str], list[str]]:
    """Top and bottom ``fraction`` of symbols by value; ties ordered by symbol.

    Each group holds at least two symbols so the t-test is defined.
    """
    if len(values) < 4:
        raise EvaluationError(f"need at least 4 symbols for a decile split, got {len(values)}")
    vals = np.array(list(values.values()), dtype=float)
    if np.all(vals == vals[0]):
        raise EvaluationError("characteristic is identical for every symbol; no decile separation")
    ordered = sorted(values, key=lambda s: (values[s], s))
    k = max(2, int(len(ordered) * fraction))
    return ordered[-k:], ordered[:k]


# ------------------------------------------------------------ stock records


@dataclass
class StockMetrics:
    symbol: str
    sector: str
    method: str
    r2_total: float | None = None
    rmse_total: float | None = None
    rmspe_total: float | None = None
    n_windows_failed: int = 0


def _json_float(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return float(x)


def write_stock_json(path, records: Sequence[StockMetrics]) -> None:
    """Machine-format per-stock JSON (floats with 17 significant digits)."""
    rows = []
    for r in records:
        d = asdict(r)
        for k in ("r2_total", "rmse_total", "rmspe_total"):
            d[k] = _json_float(d[k])
        rows.append(d)
    Path(path).write_text(_json_rows(rows) + "\n")


def _json_rows(rows) -> str:
    lines = ["["]
    for i, d in enumerate(rows):
        parts = []
        for k, v in d.items():
            if isinstance(v, float):
                parts.append(f'"{k}": {v:.17g}')
            else:
                parts.append(f"{json.dumps(k)}: {json.dumps(v)}")
        lines.append("  {" + ", ".join(parts) + "}" + ("," if i < len(rows) - 1 else ""))
    lines.append("]")
    return "\n".join(lines)


def read_stock_json(path) -> list[StockMetrics]:
    return [StockMetrics(**d) for d in json.loads(Path(path).read_text())]


# ------------------------------------------------------------ sector report


@dataclass(frozen=True)
class ReportRow:
    label: str
    values: dict


def _sector_order(sectors) -> list[str]:
    known = [s for s in GICS_SECTORS if s in sectors]
    return known + sorted(set(sectors) - set(GICS_SECTORS))


def sector_report(
    per_stock: Sequence[StockMetrics], sector_map: dict[str, str], metric: str, methods: Sequence[str] = METHODS
) -> list[ReportRow]:
    """Per-sector means of one metric per method, then overall Mean and Median rows.

    Sector labels read ``"Name (count)"`` with the number of distinct
    symbols; rows follow GICS order. Mean and Median are taken over stocks.
    """
    table: dict[str, dict[str, float]] = {}
    for rec in per_stock:
        if rec.symbol not in sector_map:
            raise EvaluationError(f"symbol {rec.symbol!r} has no sector mapping")
        value = getattr(rec, metric)
        if value is None:
            continue
        table.setdefault(rec.symbol, {})[rec.method] = float(value)
    by_sector: dict[str, list[str]] = {}
    for sym in sorted(table):
        by_sector.setdefault(sector_map[sym], []).append(sym)

    def summarise(symbols, fn):
        out = {}
        for m in methods:
            vals = [table[s][m] for s in symbols if m in table[s]]
            out[m] = float(fn(vals)) if vals else math.nan
        return out

    rows = [
        ReportRow(f"{sec} ({len(by_sector[sec])})", summarise(by_sector[sec], np.mean))
        for sec in _sector_order(by_sector)
    ]
    everyone = sorted(table)
    rows.append(ReportRow("Mean", summarise(everyone, np.mean)))
    rows.append(ReportRow("Median", summarise(everyone, np.median)))
    return rows


def write_sector_csv(path, rows: Sequence[ReportRow], methods: Sequence[str] = METHODS) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sector", *methods])
        for r in rows:
            w.writerow([r.label, *(_fmt17(r.values.get(m, math.nan)) for m in methods)])


def format_sector_table(rows: Sequence[ReportRow], methods: Sequence[str] = METHODS) -> str:
    """Human-readable table with 3 decimals."""
    width = max([len("Sector")] + [len(r.label) for r in rows])
    head = f"{'Sector':<{width}}" + "".join(f"{m.upper():>10}" for m in methods)
    body = [f"{r.label:<{width}}" + "".join(f"{r.values.get(m, math.nan):>10.3f}" for m in methods) for r in rows]
    return "\n".join([head, *body])


def _fmt17(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.17g}"


# ----------------------------------------------------------- t-test tables

TTEST_ROWS = ("High", "Low", "t.statistic", "p.value", "Sig")


def ttest_table(
    per_stock: Sequence[StockMetrics],
    characteristics: dict[str, dict[str, float]],
    metrics: Sequence[str] = ("r2_total", "rmse_total", "rmspe_total"),
    methods: Sequence[str] = METHODS,
) -> dict[str, dict[str, GroupTest]]:
    """Welch tests of top vs bottom decile for each characteristic and metric/method column."""
    values: dict[tuple[str, str], dict[str, float]] = {}
    for rec in per_stock:
        for met in metrics:
            v = getattr(rec, met)
            if v is not None:
                values.setdefault((met, rec.method), {})[rec.symbol] = float(v)
    symbols = {rec.symbol for rec in per_stock}
    out = {}
    for name in sorted(characteristics):
        char = characteristics[name]
        missing = sorted(symbols - set(char))
        if missing:
            raise EvaluationError(f"characteristic {name!r} missing for symbols {missing}")
        high, low = decile_groups({s: char[s] for s in symbols})
        cols = {}
        for met in metrics:
            for m in methods:
                vals = values.get((met, m))
                if not vals:
                    continue
                cols[f"{met}_{m}"] = two_sample_t([vals[s] for s in high], [vals[s] for s in low])
        out[name] = cols
    return out


def write_ttest_csv(path, table: dict[str, dict[str, GroupTest]]) -> None:
    """Rows High/Low/t.statistic/p.value/Sig per characteristic, one column per metric_method."""
    columns = []
    for cols in table.values():
        for c in cols:
            if c not in columns:
                columns.append(c)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["characteristic", "row", *columns])
        for name, cols in table.items():
            for row in TTEST_ROWS:
                cells = []
                for c in columns:
                    g = cols.get(c)
                    if g is None:
                        cells.append("")
                    elif row == "High":
                        cells.append(_fmt17(g.group_high_mean))
                    elif row == "Low":
                        cells.append(_fmt17(g.group_low_mean))
                    elif row == "t.statistic":
                        cells.append(_fmt17(g.t_statistic))
                    elif row == "p.value":
                        cells.append(_fmt17(g.p_value))
                    else:
                        cells.append(g.significance_stars)
                w.writerow([name, row, *cells])


def read_ttest_csv(path) -> dict[str, dict[str, dict[str, str]]]:
    """Parse a t-test CSV back to {characteristic: {row: {column: cell}}}."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        out: dict = {}
        for line in reader:
            out.setdefault(line[0], {})[line[1]] = dict(zip(header[2:], line[2:]))
    return out
