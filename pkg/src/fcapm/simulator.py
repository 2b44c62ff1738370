"""Synthetic market/asset CIDR panels with a planted beta surface.

Randomness comes from numpy's PCG64 bit generator. Every (purpose, day)
pair gets its own stream, seeded by ``SeedSequence(seed, spawn_key=(stream,
day))``, so a day's draws do not depend on how many other days or stocks are
generated or in which order.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .basis import N_GRID, BasisSystem, intraday_grid, make_basis, quad_weights
from .ingest import FLAT, CidrPanel, ExcessPanel, RiskFreeSeries, riskfree_matrix

# stream ids for SeedSequence spawn keys
_STREAM_MARKET = 0
_STREAM_NOISE = 1


def _sin_cos(u, v):
    return np.sin(np.pi * u) * np.cos(np.pi * v)


def _v_linear(u, v):
    # cubic-spline exact, penalty-free and zero at v = 0
    return v * (1.0 + u)


def _gauss_bump(u, v):
    return np.exp(-((u - 0.3) ** 2 + (v - 0.6) ** 2) / 0.08)


def _zero(u, v):
    return np.zeros(np.broadcast(u, v).shape)


SURFACES: dict[str, Callable] = {
    "sin_cos": _sin_cos,
    "v_linear": _v_linear,
    "gauss_bump": _gauss_bump,
    "zero": _zero,
}


def surface_grid(name: str, scale: float = 1.0, grid: np.ndarray | None = None) -> np.ndarray:
    """Closed-form surface on grid x grid (rows u, columns v)."""
    if name not in SURFACES:
        raise ValueError(f"unknown surface {name!r}; choose from {sorted(SURFACES)}")
    g = intraday_grid() if grid is None else grid
    return scale * SURFACES[name](g[:, None], g[None, :])


def brownian_covariance(basis: BasisSystem, scale: float = 1.0) -> np.ndarray:
    """Coefficient covariance scale * min(tau_i, tau_j) at the Greville abscissae.

    The first Greville abscissa of a clamped basis is 0, so the first
    coefficient (the curve's value at the open) has zero variance.
    """
    tau = basis.greville()
    return scale * np.minimum(tau[:, None], tau[None, :])


@dataclass
class SimScenario:
    n_days: int = 251
    n_grid: int = N_GRID
    surface: str = "sin_cos"
    surface_scale: float = 1.0
    sigma: float = 0.0
    seed: int = 0
    predictor_scale: float = 1.0
    n_basis: int = 20
    order: int = 4
    # explicit coefficient covariance overrides the Brownian default
    predictor_cov: list | None = None
    # explicit surface grid overrides the named surface
    beta_grid: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.n_days < 2:
            raise ValueError("n_days must be at least 2")

    def basis(self) -> BasisSystem:
        return make_basis(self.n_basis, self.order, intraday_grid(self.n_grid))

    def coef_covariance(self) -> np.ndarray:
        if self.predictor_cov is not None:
            return np.asarray(self.predictor_cov, dtype=float)
        return brownian_covariance(self.basis(), self.predictor_scale)

    def beta(self) -> np.ndarray:
        if self.beta_grid is not None:
            return np.asarray(self.beta_grid, dtype=float)
        return surface_grid(self.surface, self.surface_scale, intraday_grid(self.n_grid))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "SimScenario":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"{path}: unknown scenario field {sorted(unknown)[0]!r}")
        return cls(**data)


def _day_rng(seed: int, stream: int, day: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, day))))


def trading_dates(n_days: int, start: dt.date = dt.date(2021, 1, 4)) -> tuple[dt.date, ...]:
    """Consecutive weekdays from ``start`` (holidays are not modelled)."""
    out, day = [], start
    while len(out) < n_days:
        if day.weekday() < 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return tuple(out)


def simulate_market(scenario: SimScenario) -> np.ndarray:
    """Predictor curves (n_days, n_grid): Gaussian coefficients through the basis."""
    basis = scenario.basis()
    cov = scenario.coef_covariance()
    vals, vecs = np.linalg.eigh(cov)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    x = np.empty((scenario.n_days, scenario.n_grid))
    for t in range(scenario.n_days):
        z = _day_rng(scenario.seed, _STREAM_MARKET, t).standard_normal(len(vals))
        x[t] = basis.eval_matrix @ (factor @ z)
    x[:, 0] = 0.0
    return x


def respond(x: np.ndarray, beta: np.ndarray, sigma: float, seed: int, stream: int = _STREAM_NOISE) -> np.ndarray:
    """y_t(v) = sum_i w_i beta(u_i, v) x_t(u_i) + noise, with y_t(v_1) forced to 0."""
    w = quad_weights(intraday_grid(x.shape[1]))
    y = x @ (beta * w[:, None])
    if sigma > 0:
        for t in range(len(y)):
            y[t] += sigma * _day_rng(seed, stream, t).standard_normal(y.shape[1])
    y[:, 0] = 0.0
    return y


def _excess(symbol: str, curves: np.ndarray, dates) -> ExcessPanel:
    rf = RiskFreeSeries.zero(dates)
    return ExcessPanel(symbol, intraday_grid(curves.shape[1]), curves, tuple(dates), riskfree_matrix(rf, dates), FLAT)


def simulate(scenario: SimScenario) -> tuple[ExcessPanel, ExcessPanel, np.ndarray]:
    """Market and asset excess panels (zero risk-free) plus the true surface grid."""
    dates = trading_dates(scenario.n_days)
    beta = scenario.beta()
    x = simulate_market(scenario)
    y = respond(x, beta, scenario.sigma, scenario.seed)
    return _excess("MKT", x, dates), _excess("ASSET", y, dates), beta


def surface_error(est, truth: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Relative L2 distance sqrt(int int (est - truth)^2) / sqrt(int int truth^2).

    ``est`` is a BetaSurface or a grid matrix of the same shape as ``truth``.
    """
    truth = np.asarray(truth, dtype=float)
    w = quad_weights(intraday_grid(truth.shape[0])) if weights is None else np.asarray(weights)
    ww = np.outer(w, w)
    denom = np.sum(ww * truth**2)
    if denom <= 0:
        raise ValueError("true surface has zero norm")
    grid = est.evaluate() if hasattr(est, "evaluate") else np.asarray(est, dtype=float)
    return float(np.sqrt(np.sum(ww * (grid - truth) ** 2) / denom))


# ---------------------------------------------------------------- datasets


@dataclass
class StockSpec:
    symbol: str
    sector: str
    surface: str = "sin_cos"
    surface_scale: float = 1.0
    sigma: float = 0.5
    # firm characteristics written to characteristics.csv; defaults to {"noise": sigma}
    characteristics: dict | None = None


_SECTOR_CYCLE = (
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


def default_stocks() -> list[StockSpec]:
    """One stock per GICS sector with rising noise and rotating surfaces."""
    names = ("sin_cos", "gauss_bump", "v_linear")
    return [
        StockSpec(f"S{k + 1:02d}", sector, names[k % 3], 1.0, round(0.1 * (k + 1), 10))
        for k, sector in enumerate(_SECTOR_CYCLE)
    ]


@dataclass
class DatasetScenario:
    """A market index and several stocks, written out as tick/yield files.

    One extra leading day is generated because close-to-close returns need
    a previous close; after ingestion ``n_days - 1`` days remain.
    """

    n_days: int = 252
    seed: int = 0
    predictor_scale: float = 1.0
    annual_yield_pct: float = 0.1
    open_price: float = 100.0
    market_symbol: str = "SPX"
    stocks: list = field(default_factory=default_stocks)

    def __post_init__(self):
        self.stocks = [s if isinstance(s, StockSpec) else StockSpec(**s) for s in self.stocks]

    @classmethod
    def from_json(cls, path) -> "DatasetScenario":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"{path}: unknown scenario field {sorted(unknown)[0]!r}")
        return cls(**data)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def simulate_dataset(scenario: DatasetScenario) -> tuple[dict[str, CidrPanel], RiskFreeSeries, dict[str, str], dict[str, np.ndarray]]:
    """Raw (pre-risk-free) CIDR panels for the market and each stock.

    Excess curves are generated as in ``simulate`` and the flat risk-free
    constant is added back, so ingesting the exported files recovers them.
    """
    dates = trading_dates(scenario.n_days)
    rf = RiskFreeSeries.from_annual(dates, np.full(len(dates), scenario.annual_yield_pct))
    sub = riskfree_matrix(rf, dates, FLAT)
    base = SimScenario(n_days=scenario.n_days, seed=scenario.seed, predictor_scale=scenario.predictor_scale)
    x = simulate_market(base)
    panels = {scenario.market_symbol: CidrPanel(scenario.market_symbol, intraday_grid(), _anchor(x + sub), dates)}
    sectors, truths = {}, {}
    for k, spec in enumerate(scenario.stocks):
        beta = surface_grid(spec.surface, spec.surface_scale)
        y = respond(x, beta, spec.sigma, scenario.seed, stream=_STREAM_NOISE + 1 + k)
        panels[spec.symbol] = CidrPanel(spec.symbol, intraday_grid(), _anchor(y + sub), dates)
        sectors[spec.symbol] = spec.sector
        truths[spec.symbol] = beta
    return panels, rf, sectors, truths


def _anchor(curves: np.ndarray) -> np.ndarray:
    curves = curves.copy()
    curves[:, 0] = 0.0
    return curves


def chained_opens(panel: CidrPanel, first_open: float) -> np.ndarray:
    """First-slot prices where each day opens at the previous day's close."""
    opens = np.empty(panel.n_days)
    opens[0] = first_open
    for t in range(1, panel.n_days):
        opens[t] = opens[t - 1] * np.exp(panel.curves[t - 1, -1] / 100.0)
    return opens


def export_dataset(scenario: DatasetScenario, out_dir) -> dict[str, Path]:
    """Write ticks, yields, sectors, characteristics, CIDR panels and true surfaces.

    The files are exactly what the fit/forecast commands read.
    """
    from .ingest import invert_cidr, write_panel_csv, write_ticks, write_yields
    from .surface import write_grid_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panels, rf, sectors, truths = simulate_dataset(scenario)
    paths = {
        "ticks": out / "ticks.csv",
        "yields": out / "yields.csv",
        "sectors": out / "sectors.csv",
        "characteristics": out / "characteristics.csv",
        "panels": out / "panels.csv",
        "scenario": out / "scenario.json",
    }
    ticks = [invert_cidr(p, chained_opens(p, scenario.open_price)) for _, p in sorted(panels.items())]
    write_ticks(paths["ticks"], ticks)
    write_yields(paths["yields"], rf.dates, np.full(len(rf.dates), scenario.annual_yield_pct))
    write_panel_csv(paths["panels"], [p for _, p in sorted(panels.items())])
    with paths["sectors"].open("w") as fh:
        fh.write("symbol,sector\n")
        for sym in sorted(sectors):
            fh.write(f"{sym},{sectors[sym]}\n")
    chars = {s.symbol: (s.characteristics if s.characteristics is not None else {"noise": s.sigma}) for s in scenario.stocks}
    names = sorted({k for c in chars.values() for k in c})
    with paths["characteristics"].open("w") as fh:
        fh.write(",".join(["symbol", *names]) + "\n")
        for sym in sorted(chars):
            fh.write(",".join([sym, *(f"{float(chars[sym][n]):.17g}" for n in names)]) + "\n")
    grid = intraday_grid()
    for sym, beta in sorted(truths.items()):
        write_grid_csv(out / f"truth_{sym}.csv", beta, grid, grid)
    scenario.to_json(paths["scenario"])
    return paths
