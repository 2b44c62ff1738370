"""Command-line front end: simulate, fit, forecast, ttest, selftest."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .capm import daily_returns
from .config import ConfigError, RunConfig, load_config
from .evaluation import (
    StockMetrics,
    expanding_window,
    fit_metrics,
    format_sector_table,
    read_stock_json,
    sector_report,
    ttest_table,
    write_sector_csv,
    write_stock_json,
    write_ttest_csv,
)
from .ingest import IngestError, TickSeries, build_cidr, read_mapping, read_ticks, read_yields, to_excess
from .methods import PFLM, StockData, fit_model
from .simulator import DatasetScenario, export_dataset
from .surface import write_grid_csv

log = logging.getLogger("fcapm")

EXIT_OK = 0
EXIT_STOCK_FAILED = 1
EXIT_INPUT = 2

NO_SECTOR = "Unassigned"


# ------------------------------------------------------------------ inputs


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ConfigError(f"missing input path(s): {', '.join(missing)} (set in the config file or by flag)")


def load_inputs(cfg: RunConfig):
    """Tick series, risk-free series and sector map; validates yield coverage."""
    _require(cfg, "ticks", "yields")
    ticks = read_ticks(cfg.ticks)
    rf = read_yields(cfg.yields)
    if cfg.market not in ticks:
        raise IngestError(f"{cfg.ticks}: market symbol {cfg.market!r} not found")
    for sym in sorted(ticks):
        rf.lookup(ticks[sym].days)
    sectors = {}
    if cfg.sectors is not None:
        _, table = read_mapping(cfg.sectors)
        sectors = {s: row.get("sector", NO_SECTOR) for s, row in table.items()}
        unmapped = sorted(set(ticks) - {cfg.market} - set(sectors))
        if unmapped:
            raise IngestError(f"{cfg.sectors}: no sector for symbols {unmapped}")
    return ticks, rf, sectors


def stock_data(asset: TickSeries, market: TickSeries, rf, rf_mode: str) -> StockData:
    x = to_excess(build_cidr(market), rf, rf_mode)
    y = to_excess(build_cidr(asset), rf, rf_mode)
    return StockData.from_returns(x, y, daily_returns(asset, market, rf))


# ------------------------------------------------------------------ workers


def _fit_stock(asset: TickSeries, market: TickSeries, rf, cfg: RunConfig) -> dict:
    data = stock_data(asset, market, rf, cfg.rf_mode)
    mcfg = cfg.method_config()
    rows = np.arange(data.n_days)
    out = {"metrics": {}, "curves": {}, "surfaces": {}, "bic": None, "errors": {}}
    for method in cfg.method_list:
        try:
            model = fit_model(method, data, rows, mcfg)
            fm = fit_metrics(data.y.curves, model.predict(rows), data.y.grid)
        except Exception as exc:
            out["errors"][method] = f"{type(exc).__name__}: {exc}"
            continue
        out["metrics"][method] = (fm.r2_total, fm.rmse_total)
        out["curves"][method] = {"r2": fm.r2_curve, "rmse": fm.rmse_curve}
        if model.surface is not None:
            out["surfaces"][method] = model.surface.evaluate()
        if method == PFLM:
            out["bic"] = model.pflm_fit.bic_trace
    return out


def _forecast_stock(asset: TickSeries, market: TickSeries, rf, cfg: RunConfig) -> dict:
    data = stock_data(asset, market, rf, cfg.rf_mode)
    if data.n_days <= cfg.n_train:
        raise ValueError(f"{asset.symbol}: {data.n_days} usable days, need more than n_train={cfg.n_train}")
    mcfg = cfg.method_config()
    out = {"metrics": {}, "curves": {}, "errors": {}}
    for method in cfg.method_list:
        try:
            fm, _ = expanding_window(data, method, cfg.n_train, mcfg)
        except Exception as exc:
            out["errors"][method] = f"{type(exc).__name__}: {exc}"
            continue
        if fm.n_test == 0:
            out["errors"][method] = "every forecast window failed"
        out["metrics"][method] = (fm.rmspe_total, fm.n_failed)
        out["curves"][method] = {"rmspe": fm.rmspe_curve}
    return out


def _guarded(fn, asset, market, rf, cfg):
    try:
        return fn(asset, market, rf, cfg)
    except Exception as exc:
        return {"fatal": f"{type(exc).__name__}: {exc}"}


def run_stocks(fn, ticks, rf, cfg: RunConfig, jobs: int) -> dict[str, dict]:
    """Apply ``fn`` to every non-market symbol; results keyed and ordered by symbol."""
    symbols = sorted(s for s in ticks if s != cfg.market)
    market = ticks[cfg.market]
    if jobs > 1 and len(symbols) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {s: pool.submit(_guarded, fn, ticks[s], market, rf, cfg) for s in symbols}
            results = {s: futures[s].result() for s in symbols}
    else:
        results = {s: _guarded(fn, ticks[s], market, rf, cfg) for s in symbols}
    return dict(sorted(results.items()))


def _count_failures(results: dict[str, dict]) -> int:
    failed = 0
    for sym, res in results.items():
        if "fatal" in res:
            log.error("%s failed: %s", sym, res["fatal"])
            failed += 1
            continue
        for method, msg in res["errors"].items():
            log.error("%s/%s failed: %s", sym, method, msg)
        failed += bool(res["errors"])
    return failed


def _write_curves(path: Path, results: dict[str, dict], n_grid: int = 78) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["symbol", "method", "curve", *(f"v{i + 1}" for i in range(n_grid))])
        for sym, res in results.items():
            for method, curves in res.get("curves", {}).items():
                for name, values in curves.items():
                    w.writerow([sym, method, name, *("" if np.isnan(x) else f"{x:.17g}" for x in values)])


def _report(out: Path, records, sectors, metric: str, methods, quiet: bool) -> None:
    sector_map = {r.symbol: r.sector for r in records} if not sectors else sectors
    rows = sector_report(records, sector_map, metric, methods)
    write_sector_csv(out / f"table_{metric.replace('_total', '')}.csv", rows, methods)
    if not quiet:
        print(f"\n{metric}")
        print(format_sector_table(rows, methods))


# ----------------------------------------------------------------- commands


def cmd_fit(cfg: RunConfig, jobs: int = 1, quiet: bool = False) -> int:
    ticks, rf, sectors = load_inputs(cfg)
    results = run_stocks(_fit_stock, ticks, rf, cfg, jobs)
    out = Path(cfg.output)
    (out / "surfaces").mkdir(parents=True, exist_ok=True)
    grid = np.linspace(0.0, 1.0, 78)
    records = []
    for sym, res in results.items():
        for method in cfg.method_list:
            if method in res.get("metrics", {}):
                r2, rmse = res["metrics"][method]
                records.append(StockMetrics(sym, sectors.get(sym, NO_SECTOR), method, r2, rmse))
        for method, values in res.get("surfaces", {}).items():
            write_grid_csv(out / "surfaces" / f"{sym}_{method}.csv", values, grid, grid)
        if res.get("bic"):
            with (out / "surfaces" / f"{sym}_pflm_bic.csv").open("w") as fh:
                fh.write("kappa,bic\n")
                for kappa, value in res["bic"]:
                    fh.write(f"{kappa:.17g},{value:.17g}\n")
    write_stock_json(out / "fit_metrics.json", records)
    _write_curves(out / "fit_curves.csv", results)
    methods = cfg.method_list
    if records:
        _report(out, records, sectors, "r2_total", methods, quiet)
        _report(out, records, sectors, "rmse_total", methods, quiet)
    return EXIT_STOCK_FAILED if _count_failures(results) else EXIT_OK


def cmd_forecast(cfg: RunConfig, jobs: int = 1, quiet: bool = False) -> int:
    ticks, rf, sectors = load_inputs(cfg)
    results = run_stocks(_forecast_stock, ticks, rf, cfg, jobs)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for sym, res in results.items():
        for method in cfg.method_list:
            if method in res.get("metrics", {}):
                total, n_failed = res["metrics"][method]
                records.append(
                    StockMetrics(sym, sectors.get(sym, NO_SECTOR), method, rmspe_total=total, n_windows_failed=n_failed)
                )
    write_stock_json(out / "forecast_metrics.json", records)
    _write_curves(out / "forecast_curves.csv", results)
    if records:
        _report(out, records, sectors, "rmspe_total", cfg.method_list, quiet)
    return EXIT_STOCK_FAILED if _count_failures(results) else EXIT_OK


def _merged_records(out: Path) -> list[StockMetrics]:
    merged: dict[tuple[str, str], StockMetrics] = {}
    found = False
    for name in ("fit_metrics.json", "forecast_metrics.json"):
        path = out / name
        if not path.exists():
            continue
        found = True
        for r in read_stock_json(path):
            key = (r.symbol, r.method)
            if key not in merged:
                merged[key] = r
                continue
            m = merged[key]
            for f in ("r2_total", "rmse_total", "rmspe_total"):
                if getattr(r, f) is not None:
                    setattr(m, f, getattr(r, f))
            m.n_windows_failed = max(m.n_windows_failed, r.n_windows_failed)
    if not found:
        raise ConfigError(f"{out}: no fit_metrics.json or forecast_metrics.json; run fit or forecast first")
    return [merged[k] for k in sorted(merged)]


def cmd_ttest(cfg: RunConfig, quiet: bool = False) -> int:
    _require(cfg, "characteristics")
    out = Path(cfg.output)
    records = _merged_records(out)
    columns, table = read_mapping(cfg.characteristics)
    chars = {}
    for name in columns:
        values = {}
        for sym, row in table.items():
            try:
                values[sym] = float(row[name])
            except ValueError:
                raise IngestError(f"{cfg.characteristics}: {sym}/{name}: {row[name]!r} is not a number") from None
        chars[name] = values
    metrics = [m for m in ("r2_total", "rmse_total", "rmspe_total") if any(getattr(r, m) is not None for r in records)]
    methods = [m for m in cfg.method_list if any(r.method == m for r in records)]
    result = ttest_table(records, chars, metrics, methods)
    write_ttest_csv(out / "ttest.csv", result)
    if not quiet:
        for name, cols in result.items():
            print(f"\n{name}")
            print(f"{'column':<22}{'High':>10}{'Low':>10}{'t':>10}{'p':>10}  Sig")
            for col, g in cols.items():
                print(
                    f"{col:<22}{g.group_high_mean:>10.3f}{g.group_low_mean:>10.3f}"
                    f"{g.t_statistic:>10.3f}{g.p_value:>10.3f}  {g.significance_stars}"
                )
    return EXIT_OK


def cmd_simulate(scenario: DatasetScenario, out_dir, quiet: bool = False) -> int:
    paths = export_dataset(scenario, out_dir)
    if not quiet:
        for name, path in paths.items():
            print(f"{name}: {path}")
    return EXIT_OK


def cmd_selftest(quiet: bool = False) -> int:
    from .selftest import run_checks

    results = run_checks()
    for name, ok, detail in results:
        if not quiet:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_STOCK_FAILED


# --------------------------------------------------------------------- main


def _jobs(value) -> int:
    if value is None:
        value = os.environ.get("FCAPM_JOBS", "1")
    try:
        jobs = int(value)
    except ValueError:
        raise ConfigError(f"jobs must be an integer, got {value!r}") from None
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    return jobs


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--ticks")
    p.add_argument("--yields")
    p.add_argument("--sectors")
    p.add_argument("--out", dest="output")
    p.add_argument("--market")
    p.add_argument("--n-basis", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--pls-folds", type=int)
    p.add_argument("--pls-max-components", type=int)
    p.add_argument("--pls-components", help='"cv", "full" or a count')
    p.add_argument("--kappa-grid", help="comma-separated smoothing parameters")
    p.add_argument("--bic-criterion", choices=["effective_df", "literal"])
    p.add_argument("--rf-mode", choices=["flat", "cumulative"])
    p.add_argument("--causal", action="store_true", default=None)
    p.add_argument("--n-train", type=int)
    p.add_argument("--methods", help="comma-separated subset of capm,fpcr,fplsr,pflm,zero")
    p.add_argument("--jobs", help="worker processes (default: FCAPM_JOBS or 1)")
    p.add_argument("-q", "--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fcapm", description="Functional CAPM beta surfaces from intraday prices.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("fit", "in-sample fit of every method"), ("forecast", "expanding-window forecasts")):
        _add_run_options(sub.add_parser(name, help=text))
    tt = sub.add_parser("ttest", help="decile t-tests of stored metrics against firm characteristics")
    _add_run_options(tt)
    tt.add_argument("--characteristics")
    sim = sub.add_parser("simulate", help="write a synthetic dataset")
    sim.add_argument("--scenario", help="DatasetScenario JSON (default: built-in 11-sector scenario)")
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--n-days", type=int)
    sim.add_argument("-q", "--quiet", action="store_true")
    st = sub.add_parser("selftest", help="quick numerical self-checks")
    st.add_argument("-q", "--quiet", action="store_true")
    return parser


def _overrides(args) -> dict:
    keys = (
        "ticks yields sectors output market n_basis order threshold pls_folds pls_max_components "
        "bic_criterion rf_mode causal n_train characteristics"
    ).split()
    over = {k: getattr(args, k, None) for k in keys}
    if args.pls_components is not None:
        pc = args.pls_components
        over["pls_components"] = pc if pc in ("cv", "full") else int(pc)
    if args.kappa_grid is not None:
        over["kappa_grid"] = [float(k) for k in args.kappa_grid.split(",") if k.strip()]
    if args.methods is not None:
        over["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    return over


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "selftest":
            return cmd_selftest(args.quiet)
        if args.command == "simulate":
            scen = DatasetScenario.from_json(args.scenario) if args.scenario else DatasetScenario()
            if args.seed is not None:
                scen.seed = args.seed
            if args.n_days is not None:
                scen.n_days = args.n_days
            return cmd_simulate(scen, args.out, args.quiet)
        cfg = load_config(args.config, _overrides(args))
        jobs = _jobs(args.jobs)
        if args.command == "fit":
            return cmd_fit(cfg, jobs, args.quiet)
        if args.command == "forecast":
            return cmd_forecast(cfg, jobs, args.quiet)
        return cmd_ttest(cfg, args.quiet)
    except (ConfigError, IngestError, ValueError, OSError) as exc:
        print(f"fcapm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
