"""Tick and yield ingestion, cumulative intraday returns and excess-return panels."""

from __future__ import annotations

import csv
import datetime as dt
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .basis import N_GRID, intraday_grid

TRADING_DAYS = 251
# 78 five-minute bar closes, 09:35 ... 16:00; a 09:30 opening print is accepted
# as input and only seeds the carry-forward for the first slot
SLOTS = tuple(f"{(575 + 5 * i) // 60:02d}:{(575 + 5 * i) % 60:02d}" for i in range(N_GRID))
OPEN_STAMP = "09:30"
_SLOT_INDEX = {s: i for i, s in enumerate(SLOTS)}
_SLOT_INDEX[OPEN_STAMP] = -1

TICK_HEADER = ("symbol", "date", "time", "price")
YIELD_HEADER = ("date", "annual_yield_pct")
PANEL_HEADER = ("symbol", "date", *(f"t{s.replace(':', '')}" for s in SLOTS))

FLAT = "flat"
CUMULATIVE = "cumulative"


class IngestError(ValueError):
    pass


def _as_date(value) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value).strip())
    except ValueError:
        raise IngestError(f"bad ISO-8601 date {value!r}") from None


def _check_dates(dates: Sequence[dt.date], what: str) -> None:
    for a, b in zip(dates, dates[1:]):
        if b <= a:
            raise IngestError(f"{what}: dates must be strictly increasing ({a} then {b})")


@dataclass(frozen=True, eq=False)
class TickSeries:
    """78 five-minute close prices per trading day for one symbol."""

    symbol: str
    days: tuple[dt.date, ...]
    prices: np.ndarray

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 2 or prices.shape[1] != N_GRID:
            raise IngestError(f"{self.symbol}: prices must have shape (n_days, {N_GRID}), got {prices.shape}")
        if prices.shape[0] != len(self.days):
            raise IngestError(f"{self.symbol}: {len(self.days)} dates for {prices.shape[0]} price rows")
        _check_dates(self.days, self.symbol)
        bad = np.argwhere(~(prices > 0))
        if len(bad):
            t, i = bad[0]
            raise IngestError(
                f"{self.symbol}: non-positive price {prices[t, i]!r} on {self.days[t]} at {SLOTS[i]}"
            )
        object.__setattr__(self, "prices", prices)


@dataclass(frozen=True, eq=False)
class CidrPanel:
    """Daily cumulative intraday return curves in percent (rows = days)."""

    symbol: str
    grid: np.ndarray
    curves: np.ndarray
    dates: tuple[dt.date, ...]

    @property
    def n_days(self) -> int:
        return self.curves.shape[0]


@dataclass(frozen=True, eq=False)
class RiskFreeSeries:
    """Risk-free rates derived from the one-year par yield (annual percent)."""

    dates: tuple[dt.date, ...]
    daily_rate: np.ndarray
    intraday_rate: np.ndarray

    @classmethod
    def from_annual(cls, dates: Iterable, annual_pct) -> "RiskFreeSeries":
        dates = tuple(_as_date(d) for d in dates)
        _check_dates(dates, "yield series")
        annual = np.asarray(annual_pct, dtype=float)
        if annual.shape != (len(dates),):
            raise IngestError(f"{len(dates)} dates for {annual.size} yields")
        return cls(dates, annual / TRADING_DAYS, annual / (TRADING_DAYS * N_GRID))

    @classmethod
    def zero(cls, dates: Iterable) -> "RiskFreeSeries":
        dates = tuple(dates)
        return cls.from_annual(dates, np.zeros(len(dates)))

    def lookup(self, dates: Sequence[dt.date]) -> np.ndarray:
        """Row indices of ``dates`` in this series."""
        index = {d: i for i, d in enumerate(self.dates)}
        try:
            return np.array([index[d] for d in dates], dtype=int)
        except KeyError as exc:
            raise IngestError(f"no risk-free rate for {exc.args[0]}") from None


@dataclass(frozen=True, eq=False)
class ExcessPanel:
    """CIDR curves net of the risk-free subtrahend (same layout as CidrPanel).

    ``curves + riskfree`` reproduces the CIDR values bit for bit wherever a
    double with that property exists. The rare remaining entries (where the
    sum would have to cross a binade) carry a one-ulp ``rounding_fix`` so
    that ``add_back`` is exact everywhere.
    """

    symbol: str
    grid: np.ndarray
    curves: np.ndarray
    dates: tuple[dt.date, ...]
    riskfree: np.ndarray
    rf_mode: str = FLAT
    rounding_fix: np.ndarray | None = None

    @property
    def n_days(self) -> int:
        return self.curves.shape[0]

    def add_back(self) -> np.ndarray:
        total = self.curves + self.riskfree
        return total if self.rounding_fix is None else total + self.rounding_fix

    def take(self, rows) -> "ExcessPanel":
        rows = np.arange(self.n_days)[rows]
        return ExcessPanel(
            self.symbol,
            self.grid,
            self.curves[rows],
            tuple(self.dates[i] for i in rows),
            self.riskfree[rows],
            self.rf_mode,
            None if self.rounding_fix is None else self.rounding_fix[rows],
        )


def build_cidr(ticks: TickSeries) -> CidrPanel:
    """100 * (ln P_t(u_i) - ln P_t(u_1)); the open column is exactly zero."""
    logp = np.log(ticks.prices)
    curves = 100.0 * (logp - logp[:, :1])
    curves[:, 0] = 0.0
    return CidrPanel(ticks.symbol, intraday_grid(), curves, ticks.days)


def invert_cidr(panel: CidrPanel, open_prices) -> TickSeries:
    opens = np.asarray(open_prices, dtype=float)
    if opens.shape != (panel.n_days,):
        raise IngestError(f"need one open price per day ({panel.n_days}), got {opens.shape}")
    if np.any(~(opens > 0)):
        raise IngestError("open prices must be positive")
    if not np.all(np.isfinite(panel.curves)):
        raise IngestError(f"{panel.symbol}: panel contains non-finite values")
    prices = np.exp(panel.curves / 100.0) * opens[:, None]
    return TickSeries(panel.symbol, panel.dates, prices)


def fill_gaps(
    symbol: str, raw: Mapping[dt.date, Iterable[tuple[object, float]]]
) -> TickSeries:
    """Place sparse (slot, price) observations on the 78-slot grid.

    Slots are ``"HH:MM"`` strings or integer indices (-1 for the 09:30
    opening print). Missing slots carry the last observation forward; slots
    before the first observation take the opening print if there is one,
    else the first observed price.
    """
    days = sorted(_as_date(d) for d in raw)
    rows = []
    by_date = {_as_date(d): obs for d, obs in raw.items()}
    for day in days:
        row = np.full(N_GRID, np.nan)
        opening = None
        for slot, price in by_date[day]:
            idx = _SLOT_INDEX.get(slot) if isinstance(slot, str) else int(slot)
            if idx is None or not -1 <= idx < N_GRID:
                raise IngestError(f"{symbol}: {day}: time {slot!r} is not a 5-minute stamp in 09:30-16:00")
            if idx < 0:
                opening = float(price)
            else:
                row[idx] = float(price)
        seen = np.flatnonzero(~np.isnan(row))
        if not len(seen):
            if opening is None:
                raise IngestError(f"{symbol}: no observations on {day}")
            seen = [N_GRID]
        row[: seen[0]] = row[seen[0]] if opening is None else opening
        # forward fill via index of the last valid slot
        last = np.maximum.accumulate(np.where(np.isnan(row), 0, np.arange(N_GRID)))
        rows.append(row[last])
    return TickSeries(symbol, tuple(days), np.array(rows).reshape(len(days), N_GRID))


def _exact_difference(values: np.ndarray, sub: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """values - sub, nudged by an ulp where needed so that result + sub == values.

    Also returns ``values - (result + sub)``, exact and zero except where no
    nudge can work.
    """
    out = values - sub
    for _ in range(4):
        miss = (out + sub) != values
        if not miss.any():
            break
        step = np.where((out + sub) < values, np.inf, -np.inf)
        out = np.where(miss, np.nextafter(out, step), out)
    # keep the nudge only where it helped; elsewhere the plain difference is nearest
    plain = values - sub
    out = np.where((out + sub) == values, out, plain)
    return out, values - (out + sub)


def riskfree_matrix(rf: RiskFreeSeries, dates: Sequence[dt.date], mode: str = FLAT) -> np.ndarray:
    rate = rf.intraday_rate[rf.lookup(dates)]
    if mode == FLAT:
        return np.repeat(rate[:, None], N_GRID, axis=1)
    if mode == CUMULATIVE:
        return rate[:, None] * np.arange(N_GRID)[None, :]
    raise IngestError(f"rf_mode must be {FLAT!r} or {CUMULATIVE!r}, got {mode!r}")


def to_excess(panel: CidrPanel, rf: RiskFreeSeries, mode: str = FLAT) -> ExcessPanel:
    """Subtract each day's risk-free constant (flat) or accrual (cumulative)."""
    sub = riskfree_matrix(rf, panel.dates, mode)
    excess, fix = _exact_difference(panel.curves, sub)
    return ExcessPanel(panel.symbol, panel.grid, excess, panel.dates, sub, mode, fix if fix.any() else None)


# ---------------------------------------------------------------- file formats


def _open_csv(path, expected: Sequence[str], exact: bool = True):
    fh = Path(path).open(newline="")
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        fh.close()
        raise IngestError(f"{path}: empty file") from None
    unknown = [h for h in header if h not in expected]
    if unknown:
        fh.close()
        raise IngestError(f"{path}: unknown column {unknown[0]!r} (expected {', '.join(expected)})")
    missing = [h for h in expected if h not in header] if exact else []
    if missing:
        fh.close()
        raise IngestError(f"{path}: missing column {missing[0]!r}")
    return fh, reader, header


def read_ticks(path) -> dict[str, TickSeries]:
    """Parse a ``symbol,date,time,price`` file into gap-filled series per symbol."""
    fh, reader, header = _open_csv(path, TICK_HEADER)
    col = {h: i for i, h in enumerate(header)}
    raw: dict[str, dict[dt.date, list]] = defaultdict(lambda: defaultdict(list))
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                sym = row[col["symbol"]].strip()
                day = _as_date(row[col["date"]])
                slot = row[col["time"]].strip()
                price = float(row[col["price"]])
            except (IndexError, ValueError) as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
            if slot not in _SLOT_INDEX:
                raise IngestError(f"{path}:{lineno}: time {slot!r} is not a 5-minute slot in 09:30-16:00")
            if not price > 0:
                raise IngestError(f"{path}:{lineno}: non-positive price {price!r} for {sym} on {day} {slot}")
            raw[sym][day].append((slot, price))
    return {sym: fill_gaps(sym, days) for sym, days in sorted(raw.items())}


def write_ticks(path, series: Iterable[TickSeries]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TICK_HEADER)
        for ts in series:
            for day, row in zip(ts.days, ts.prices):
                for slot, price in zip(SLOTS, row):
                    writer.writerow([ts.symbol, day.isoformat(), slot, f"{price:.17g}"])


def read_yields(path) -> RiskFreeSeries:
    fh, reader, header = _open_csv(path, YIELD_HEADER)
    col = {h: i for i, h in enumerate(header)}
    dates, values = [], []
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                dates.append(_as_date(row[col["date"]]))
                values.append(float(row[col["annual_yield_pct"]]))
            except (IndexError, ValueError) as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
    return RiskFreeSeries.from_annual(dates, values)


def write_yields(path, dates: Sequence[dt.date], annual_pct) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(YIELD_HEADER)
        for d, y in zip(dates, annual_pct):
            writer.writerow([d.isoformat(), f"{y:.17g}"])


def write_panel_csv(path, panels: Iterable) -> None:
    """Wide panel export: one row per (symbol, date), one column per slot."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PANEL_HEADER)
        for p in panels:
            for day, row in zip(p.dates, p.curves):
                writer.writerow([p.symbol, day.isoformat(), *(f"{x:.17g}" for x in row)])


def read_panel_csv(path) -> dict[str, CidrPanel]:
    fh, reader, header = _open_csv(path, PANEL_HEADER)
    rows: dict[str, list] = defaultdict(list)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows[row[0]].append((_as_date(row[1]), [float(x) for x in row[2:]]))
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
    out = {}
    for sym, items in sorted(rows.items()):
        dates = tuple(d for d, _ in items)
        _check_dates(dates, sym)
        out[sym] = CidrPanel(sym, intraday_grid(), np.array([v for _, v in items]), dates)
    return out


def read_mapping(path, key: str = "symbol") -> tuple[list[str], dict[str, dict[str, str]]]:
    """Generic ``symbol,...`` table (sector map, firm characteristics)."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[0].strip() != key:
            raise IngestError(f"{path}: first column must be {key!r}")
        columns = [c.strip() for c in reader.fieldnames[1:]]
        table = {}
        for row in reader:
            table[row[key].strip()] = {c.strip(): (v or "").strip() for c, v in row.items() if c != key}
    return columns, table
