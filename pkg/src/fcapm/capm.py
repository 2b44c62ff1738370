"""Classical daily CAPM: scalar alpha/beta by OLS on daily excess returns."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .ingest import RiskFreeSeries, TickSeries


class CapmError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DailyReturns:
    """Daily excess returns in percent; ``rf`` is the daily risk-free rate."""

    dates: tuple[dt.date, ...]
    asset_excess: np.ndarray
    market_excess: np.ndarray
    rf: np.ndarray

    def __len__(self) -> int:
        return len(self.dates)

    def take(self, rows) -> "DailyReturns":
        rows = np.arange(len(self.dates))[rows]
        return DailyReturns(
            tuple(self.dates[i] for i in rows), self.asset_excess[rows], self.market_excess[rows], self.rf[rows]
        )


def close_to_close(ticks: TickSeries) -> np.ndarray:
    """100 * (ln P_t(16:00) - ln P_{t-1}(16:00)); NaN for the first day."""
    logc = np.log(ticks.prices[:, -1])
    out = np.full(len(logc), np.nan)
    out[1:] = 100.0 * np.diff(logc)
    return out


def daily_returns(asset: TickSeries, market: TickSeries, rf: RiskFreeSeries) -> DailyReturns:
    """Excess close-to-close returns on the asset's dates (first day dropped)."""
    if asset.days != market.days:
        raise CapmError(f"{asset.symbol} and {market.symbol} cover different trading days")
    rate = rf.daily_rate[rf.lookup(asset.days)]
    ra, rm = close_to_close(asset), close_to_close(market)
    return DailyReturns(asset.days[1:], ra[1:] - rate[1:], rm[1:] - rate[1:], rate[1:])


def fit_capm(returns: DailyReturns) -> tuple[float, float]:
    """OLS intercept and slope of asset excess on market excess."""
    y = np.asarray(returns.asset_excess, dtype=float)
    x = np.asarray(returns.market_excess, dtype=float)
    if len(x) < 3:
        raise CapmError(f"need at least 3 days, got {len(x)}")
    xc = x - x.mean()
    sxx = xc @ xc
    if sxx <= 0:
        raise CapmError("market excess return has zero variance")
    beta = float(xc @ (y - y.mean()) / sxx)
    alpha = float(y.mean() - beta * x.mean())
    return alpha, beta


def predict_capm(beta: float, alpha: float, market_excess_day, rf_day):
    """Predicted daily asset return: rf + alpha + beta * market excess."""
    return rf_day + alpha + beta * market_excess_day
