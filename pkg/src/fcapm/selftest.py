"""Fast numerical self-checks run by ``fcapm selftest``."""

from __future__ import annotations

import time

import numpy as np

from .basis import fit_coefs, make_basis
from .fpca import fpca
from .ingest import TickSeries, build_cidr, invert_cidr
from .methods import MethodConfig, StockData, fit_model
from .simulator import SimScenario, simulate, surface_error, trading_dates


def coefficient_ols(x_curves, y_curves, basis) -> np.ndarray:
    """Fitted response curves from OLS of response coefficients on [1, predictor coefficients]."""
    a = fit_coefs(x_curves, basis, exclude_anchor=True).coefs
    z = fit_coefs(y_curves, basis, exclude_anchor=True).coefs
    design = np.column_stack([np.ones(len(a)), a])
    sol, *_ = np.linalg.lstsq(design, z, rcond=None)
    return basis.curves(design @ sol)


def _roundtrip():
    rng = np.random.default_rng(0)
    prices = np.exp(rng.normal(0, 0.01, (20, 78)).cumsum(axis=1)) * 50
    ts = TickSeries("T", trading_dates(20), prices)
    back = invert_cidr(build_cidr(ts), prices[:, 0]).prices
    err = float(np.max(np.abs(back / prices - 1)))
    return err < 1e-10, f"max relative error {err:.2e}"


def _basis():
    b = make_basis()
    pou = float(np.max(np.abs(b.eval_matrix.sum(axis=1) - 1)))
    one = float(np.ones(20) @ b.gram @ np.ones(20))
    return pou < 1e-10 and abs(one - 1) < 1e-8, f"partition of unity {pou:.1e}, 1'G1-1 {one - 1:.1e}"


def _fpca():
    x, _, _ = simulate(SimScenario(n_days=100, seed=1))
    eig, _ = fpca(fit_coefs(x.curves, make_basis(), exclude_anchor=True), 1.0)
    phi = eig.eigenfunction_coefs
    err = float(np.max(np.abs(phi.T @ eig.gram @ phi - np.eye(phi.shape[1]))))
    return err < 1e-8, f"eigenfunction orthonormality {err:.1e}"


def white_predictor_cov(n_basis: int = 20, scale: float = 4.0) -> list:
    """Independent coefficients with the open coefficient pinned at zero."""
    cov = scale * np.eye(n_basis)
    cov[0, 0] = 0.0
    return cov.tolist()


def _triangle():
    x, y, _ = simulate(SimScenario(n_days=60, sigma=0.3, seed=2, predictor_cov=white_predictor_cov()))
    data = StockData(x, y)
    cfg = MethodConfig(threshold=1.0, pls_components="full", kappa_grid=(1e-12,))
    rows = np.arange(60)
    oracle = coefficient_ols(x.curves, y.curves, data.basis(cfg))
    gaps = {}
    for m in ("fpcr", "fplsr", "pflm"):
        gaps[m] = float(np.max(np.abs(fit_model(m, data, rows, cfg).predict(rows) - oracle)))
    ok = all(g < 1e-5 for g in gaps.values())
    return ok, ", ".join(f"{m} {g:.1e}" for m, g in gaps.items())


def _recovery():
    x, y, beta = simulate(SimScenario(n_days=250, seed=3))
    data = StockData(x, y)
    err = surface_error(fit_model("fpcr", data, np.arange(250), MethodConfig(threshold=0.99)).surface, beta)
    return err < 0.05, f"FPCR relative surface error {err:.4f}"


CHECKS = (
    ("cidr round trip", _roundtrip),
    ("basis", _basis),
    ("fpca", _fpca),
    ("oracle triangle", _triangle),
    ("surface recovery", _recovery),
)


def run_checks():
    out = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), f"{detail} ({time.perf_counter() - t0:.2f}s)"))
    return out
