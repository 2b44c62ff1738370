"""Uniform fit/predict interface over the four estimators (plus a zero stub).

Every method is trained on a subset of days and predicts excess response
curves on the 78-point grid for other days from their realized predictor
curves. The classical CAPM predicts a single daily number which is spread
flat across the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSystem, CoefPanel, fit_coefs, make_basis
from .capm import DailyReturns, fit_capm
from .fplsr import fit_fplsr, select_components
from .fpcr import fpcr
from .ingest import ExcessPanel
from .pflm import EFFECTIVE_DF, PenaltySpec, PflmFit, fit_pflm
from .surface import BetaSurface

CAPM = "capm"
FPCR = "fpcr"
FPLSR = "fplsr"
PFLM = "pflm"
ZERO = "zero"
METHODS = (CAPM, FPCR, FPLSR, PFLM)
ALL_METHODS = METHODS + (ZERO,)


class MethodError(ValueError):
    pass


@dataclass(frozen=True)
class MethodConfig:
    n_basis: int = 20
    order: int = 4
    threshold: float = 0.95
    y_threshold: float | None = None
    # "cv", "full" or a fixed count
    pls_components: object = "cv"
    pls_folds: int = 5
    pls_max_components: int = 10
    kappa_grid: tuple | None = None
    bic_criterion: str = EFFECTIVE_DF
    causal: bool = False


@dataclass(eq=False)
class StockData:
    """Aligned market/asset excess panels plus daily excess returns for CAPM.

    ``market_daily`` and ``asset_daily`` default to the last grid value of
    each excess curve, i.e. open-to-close returns, which is all that panels
    without overnight information can provide.
    """

    x: ExcessPanel
    y: ExcessPanel
    market_daily: np.ndarray | None = None
    asset_daily: np.ndarray | None = None
    _coef_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.x.dates != self.y.dates:
            raise MethodError(f"{self.x.symbol} and {self.y.symbol} panels cover different days")
        if self.market_daily is None:
            self.market_daily = self.x.curves[:, -1].copy()
        if self.asset_daily is None:
            self.asset_daily = self.y.curves[:, -1].copy()
        if len(self.market_daily) != self.n_days or len(self.asset_daily) != self.n_days:
            raise MethodError("daily return series do not match the panel length")

    @classmethod
    def from_returns(cls, x: ExcessPanel, y: ExcessPanel, daily: DailyReturns) -> "StockData":
        """Attach close-to-close returns, dropping panel days they do not cover."""
        pos = {d: i for i, d in enumerate(daily.dates)}
        keep = [i for i, d in enumerate(x.dates) if d in pos]
        idx = [pos[x.dates[i]] for i in keep]
        return cls(x.take(keep), y.take(keep), daily.market_excess[idx], daily.asset_excess[idx])

    @property
    def n_days(self) -> int:
        return self.x.n_days

    @property
    def symbol(self) -> str:
        return self.y.symbol

    def basis(self, cfg: MethodConfig) -> BasisSystem:
        key = ("basis", cfg.n_basis, cfg.order)
        if key not in self._coef_cache:
            self._coef_cache[key] = make_basis(cfg.n_basis, cfg.order, self.x.grid)
        return self._coef_cache[key]

    def coefs(self, cfg: MethodConfig) -> tuple[CoefPanel, CoefPanel]:
        """Smoothed coefficients of every day; each day is fitted on its own."""
        key = ("coefs", cfg.n_basis, cfg.order)
        if key not in self._coef_cache:
            basis = self.basis(cfg)
            self._coef_cache[key] = (
                fit_coefs(self.x.curves, basis, exclude_anchor=True),
                fit_coefs(self.y.curves, basis, exclude_anchor=True),
            )
        return self._coef_cache[key]


@dataclass(eq=False)
class FittedModel:
    method: str
    data: StockData
    cfg: MethodConfig
    surface: BetaSurface | None = None
    capm: tuple[float, float] | None = None
    pflm_fit: PflmFit | None = None
    n_components: int | None = None

    def predict(self, rows) -> np.ndarray:
        rows = np.arange(self.data.n_days)[rows]
        n_grid = self.data.y.curves.shape[1]
        if self.method == ZERO:
            return np.zeros((len(rows), n_grid))
        if self.method == CAPM:
            alpha, beta = self.capm
            daily = alpha + beta * self.data.market_daily[rows]
            return np.repeat(daily[:, None], n_grid, axis=1)
        x_coefs, _ = self.data.coefs(self.cfg)
        return self.surface.predict(x_coefs.coefs[rows])


def _pls_count(cfg: MethodConfig, x: CoefPanel, y: CoefPanel) -> int | None:
    if cfg.pls_components == "full":
        return None
    if cfg.pls_components == "cv":
        return select_components(x, y, cfg.pls_folds, cfg.pls_max_components)
    return int(cfg.pls_components)


def fit_model(method: str, data: StockData, rows, cfg: MethodConfig | None = None) -> FittedModel:
    """Train ``method`` on the given day indices."""
    cfg = MethodConfig() if cfg is None else cfg
    rows = np.arange(data.n_days)[rows]
    if method == ZERO:
        return FittedModel(method, data, cfg)
    if method == CAPM:
        daily = DailyReturns(
            tuple(data.x.dates[i] for i in rows), data.asset_daily[rows], data.market_daily[rows], np.zeros(len(rows))
        )
        return FittedModel(method, data, cfg, capm=fit_capm(daily))
    x_all, y_all = data.coefs(cfg)
    x, y = x_all.take(rows), y_all.take(rows)
    if method == FPCR:
        surface = fpcr(x, y, cfg.threshold, cfg.y_threshold, causal=cfg.causal)
        return FittedModel(method, data, cfg, surface=surface)
    if method == FPLSR:
        k = _pls_count(cfg, x, y)
        surface = fit_fplsr(x, y, k, causal=cfg.causal)
        return FittedModel(method, data, cfg, surface=surface, n_components=k)
    if method == PFLM:
        basis = data.basis(cfg)
        spec = PenaltySpec.build(basis, basis, cfg.kappa_grid, criterion=cfg.bic_criterion)
        fit, surface = fit_pflm(x, data.y.curves[rows], basis, basis, spec, causal=cfg.causal)
        return FittedModel(method, data, cfg, surface=surface, pflm_fit=fit)
    raise MethodError(f"unknown method {method!r}; choose from {list(ALL_METHODS)}")


def fit_predict(method: str, data: StockData, train, test, cfg: MethodConfig | None = None) -> np.ndarray:
    return fit_model(method, data, train, cfg).predict(test)
