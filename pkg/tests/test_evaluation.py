import csv
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg
from scipy.integrate import trapezoid

from fcapm.basis import quad_weights
from fcapm.evaluation import (
    GICS_SECTORS,
    TTEST_ROWS,
    EvaluationError,
    ForecastRecord,
    StockMetrics,
    decile_groups,
    expanding_window,
    fit_metrics,
    format_sector_table,
    read_stock_json,
    read_ttest_csv,
    rmspe,
    sector_report,
    stars,
    ttest_table,
    two_sample_t,
    write_sector_csv,
    write_stock_json,
    write_ttest_csv,
)
from fcapm.ingest import read_mapping
from fcapm.methods import MethodConfig, StockData
from fcapm.simulator import SimScenario, simulate

GOLDEN = Path(__file__).parent / "golden"


def naive_metrics(obs, fit):
    n, m = obs.shape
    r2, rmse = [], []
    for j in range(m):
        mean = sum(obs[i, j] for i in range(n)) / n
        sse = sum((obs[i, j] - fit[i, j]) ** 2 for i in range(n))
        sst = sum((obs[i, j] - mean) ** 2 for i in range(n))
        r2.append(1 - sse / sst if sst > 0 else math.nan)
        rmse.append(math.sqrt(sse / n))
    return np.array(r2), np.array(rmse)


class TestFitMetrics:
    def test_perfect_fit(self):
        obs = np.random.default_rng(0).normal(size=(30, 78))
        m = fit_metrics(obs, obs)
        assert np.all(m.r2_curve == 1) and np.all(m.rmse_curve == 0)
        assert (m.r2_total, m.rmse_total) == (1.0, 0.0)

    def test_column_mean_predictor(self):
        obs = np.random.default_rng(1).normal(size=(30, 78))
        m = fit_metrics(obs, np.broadcast_to(obs.mean(0), obs.shape))
        np.testing.assert_allclose(m.r2_curve, 0.0, atol=1e-14)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(2)
        obs = rng.normal(size=(25, 78))
        fit = obs + rng.normal(0, 0.4, obs.shape)
        m = fit_metrics(obs, fit)
        r2, rmse = naive_metrics(obs, fit)
        np.testing.assert_allclose(m.r2_curve, r2, rtol=0, atol=1e-12)
        np.testing.assert_allclose(m.rmse_curve, rmse, rtol=0, atol=1e-12)
        assert m.r2_total == pytest.approx(np.mean(r2[1:]), abs=1e-12)

    @given(seed=st.integers(0, 10_000), n=st.integers(3, 40))
    def test_rmse_consistent_with_r2(self, seed, n):
        rng = np.random.default_rng(seed)
        obs = rng.normal(size=(n, 78))
        fit = rng.normal(size=(n, 78))
        m = fit_metrics(obs, fit)
        sst = np.sum((obs - obs.mean(0)) ** 2, axis=0)
        np.testing.assert_allclose(m.rmse_curve, np.sqrt((1 - m.r2_curve) * sst / n), atol=1e-8)
        assert np.all(m.r2_curve <= 1)

    def test_anchor_column_excluded(self):
        rng = np.random.default_rng(3)
        obs = rng.normal(size=(20, 78))
        obs[:, 0] = 0.0
        fit = obs * 0.5
        m = fit_metrics(obs, fit)
        assert np.isnan(m.r2_curve[0])
        assert m.r2_total == pytest.approx(np.mean(m.r2_curve[1:]))

    def test_rmse_total_is_trapezoid(self):
        rng = np.random.default_rng(4)
        obs, fit = rng.normal(size=(2, 10, 78))
        m = fit_metrics(obs, fit)
        assert m.rmse_total == pytest.approx(trapezoid(m.rmse_curve, np.linspace(0, 1, 78)), abs=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(EvaluationError):
            fit_metrics(np.zeros((3, 78)), np.zeros((3, 77)))


@pytest.fixture(scope="module")
def toy():
    x, y, _ = simulate(SimScenario(n_days=20, sigma=0.3, seed=41))
    return StockData(x, y)


def independent_fpcr_prediction(data, train, test, threshold=0.95):
    """Per-window FPCR coded from scratch: SVD of Gram-whitened coefficients."""
    basis = data.basis(MethodConfig())
    emat = basis.eval_matrix[1:]
    xa = np.linalg.lstsq(emat, data.x.curves[:, 1:].T, rcond=None)[0].T
    ya = np.linalg.lstsq(emat, data.y.curves[:, 1:].T, rcond=None)[0].T
    root = np.real(linalg.sqrtm(basis.gram))
    root_inv = np.linalg.inv(root)

    def components(a):
        mean = a[train].mean(0)
        _, s, vt = np.linalg.svd((a[train] - mean) @ root, full_matrices=False)
        share = np.cumsum(s**2) / np.sum(s**2)
        k = int(np.argmax(share >= threshold - 1e-12)) + 1
        return mean, vt[:k].T

    xm, vx = components(xa)
    ym, vy = components(ya)
    d = (xa[train] - xm) @ root @ vx
    c = (ya[train] - ym) @ root @ vy
    b = np.linalg.lstsq(d, c, rcond=None)[0]
    pred = ym + ((xa[test] - xm) @ root @ vx) @ b @ vy.T @ root_inv
    return pred @ basis.eval_matrix.T


class TestExpandingWindow:
    def test_fpcr_matches_independent_refit(self, toy):
        _, records = expanding_window(toy, "fpcr", n_train=10)
        assert len(records) == 10
        for rec in records:
            expected = independent_fpcr_prediction(toy, np.arange(rec.index), np.array([rec.index]))[0]
            assert np.max(np.abs(rec.predicted - expected)) < 1e-8

    def test_zero_stub_is_column_rms(self, toy):
        metrics, _ = expanding_window(toy, "zero", n_train=12)
        test = toy.y.curves[12:]
        np.testing.assert_allclose(metrics.rmspe_curve, np.sqrt(np.mean(test**2, axis=0)), rtol=1e-14)
        assert metrics.rmspe_total == pytest.approx(quad_weights(toy.y.grid) @ metrics.rmspe_curve, abs=1e-10)

    def test_last_day_only(self, toy):
        metrics, records = expanding_window(toy, "fpcr", n_train=19)
        assert (metrics.n_test, len(records), records[0].index) == (1, 1, 19)

    def test_n_train_validated(self, toy):
        with pytest.raises(EvaluationError):
            expanding_window(toy, "zero", n_train=20)

    def test_exact_linear_is_exact(self):
        x, y, _ = simulate(SimScenario(n_days=40, surface="v_linear", seed=42))
        cfg = MethodConfig(threshold=1.0)
        metrics, _ = expanding_window(StockData(x, y), "fpcr", n_train=30, cfg=cfg)
        assert metrics.rmspe_total < 1e-6

    def test_failures_counted(self, toy):
        def flaky(data, train, test):
            if len(train) % 2:
                raise RuntimeError("boom")
            return np.zeros((len(test), 78))

        metrics, records = expanding_window(toy, flaky, n_train=10)
        assert (metrics.n_test, metrics.n_failed) == (5, 5)
        assert all(z % 2 == 1 for z, _ in metrics.failures)

    @given(seed=st.integers(0, 1000))
    def test_rmspe_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        recs = [ForecastRecord(i, None, rng.normal(size=78), rng.normal(size=78)) for i in range(12)]
        grid = np.linspace(0, 1, 78)
        curve, total = rmspe(recs, grid)
        shuffled = [recs[i] for i in rng.permutation(12)]
        curve2, total2 = rmspe(shuffled, grid)
        np.testing.assert_allclose(curve2, curve, rtol=1e-14)
        assert total2 == pytest.approx(total, rel=1e-14)


def welch_t(a, b):
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    return (a.mean() - b.mean()) / np.sqrt(va + vb)


class TestTwoSampleT:
    def test_identical_groups(self):
        g = two_sample_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert (g.t_statistic, g.p_value, g.significance_stars) == (0.0, 1.0, "")

    def test_constant_equal_groups(self):
        g = two_sample_t([2.0, 2.0], [2.0, 2.0, 2.0])
        assert (g.t_statistic, g.p_value) == (0.0, 1.0)

    def test_separated_groups(self):
        jitter = 1e-9 * np.arange(4)
        g = two_sample_t(np.zeros(4) + jitter, np.ones(4) - jitter)
        assert abs(g.t_statistic) > 1e6 and g.p_value < 1e-6
        assert g.significance_stars == "***"

    def test_matches_formula(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(0, 1, 12), rng.normal(0.5, 2, 9)
        assert two_sample_t(a, b).t_statistic == pytest.approx(welch_t(a, b), rel=1e-12)

    def test_permutation_oracle(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(0.0, 1.0, 15), rng.normal(0.5, 1.0, 20)
        observed = abs(welch_t(a, b))
        pooled = np.concatenate([a, b])
        hits, total = 0, 0
        for _ in range(20):
            perm = rng.permuted(np.broadcast_to(pooled, (10_000, 35)), axis=1)
            pa, pb = perm[:, :15], perm[:, 15:]
            t = (pa.mean(1) - pb.mean(1)) / np.sqrt(pa.var(1, ddof=1) / 15 + pb.var(1, ddof=1) / 20)
            hits += int(np.sum(np.abs(t) >= observed))
            total += len(t)
        assert abs(two_sample_t(a, b).p_value - hits / total) < 0.02

    def test_small_group_rejected(self):
        with pytest.raises(EvaluationError):
            two_sample_t([1.0], [1.0, 2.0])

    @pytest.mark.parametrize("p, mark", [(0.0005, "***"), (0.001, "**"), (0.005, "**"), (0.03, "*"), (0.05, ""), (0.5, "")])
    def test_stars(self, p, mark):
        assert stars(p) == mark


class TestDeciles:
    def test_groups(self):
        vals = {f"S{i:02d}": float(i) for i in range(30)}
        high, low = decile_groups(vals)
        assert high == ["S27", "S28", "S29"] and low == ["S00", "S01", "S02"]

    def test_minimum_two_per_group(self):
        high, low = decile_groups({"A": 1.0, "B": 2.0, "C": 3.0, "D": 4.0})
        assert (high, low) == (["C", "D"], ["A", "B"])

    def test_ties_by_symbol(self):
        high, low = decile_groups({"D": 1.0, "C": 1.0, "B": 1.0, "A": 0.0, "E": 2.0})
        assert low == ["A", "B"] and high == ["D", "E"]

    def test_identical_rejected(self):
        with pytest.raises(EvaluationError, match="identical"):
            decile_groups({s: 3.0 for s in "ABCDE"})

    def test_too_few_rejected(self):
        with pytest.raises(EvaluationError):
            decile_groups({"A": 1.0, "B": 2.0, "C": 3.0})


def metric(sym, sector, method, value):
    return StockMetrics(sym, sector, method, r2_total=value, rmse_total=value, rmspe_total=value)


class TestSectorReport:
    def test_single_stock(self):
        rows = sector_report([metric("A", "Energy", m, 0.1 * i) for i, m in enumerate(("capm", "fpcr", "fplsr", "pflm"))],
                             {"A": "Energy"}, "rmse_total")
        assert [r.label for r in rows] == ["Energy (1)", "Mean", "Median"]
        assert rows[0].values == rows[1].values == rows[2].values

    def test_two_sectors(self):
        recs = [metric("A", "Energy", "capm", 1.0), metric("B", "Utilities", "capm", 3.0)]
        rows = sector_report(recs, {"A": "Energy", "B": "Utilities"}, "rmse_total", ["capm"])
        assert [r.values["capm"] for r in rows] == [1.0, 3.0, 2.0, 2.0]

    def test_unmapped_symbol_named(self):
        with pytest.raises(EvaluationError, match="'ZZ'"):
            sector_report([metric("ZZ", "Energy", "capm", 1.0)], {}, "rmse_total")

    def test_human_table_three_decimals(self):
        rows = sector_report([metric("A", "Energy", "capm", 1 / 3)], {"A": "Energy"}, "rmse_total", ["capm"])
        assert "0.333" in format_sector_table(rows, ["capm"]) and "0.3333" not in format_sector_table(rows, ["capm"])


@pytest.fixture(scope="module")
def frozen():
    recs = read_stock_json(GOLDEN / "stock_metrics.json")
    _, table = read_mapping(GOLDEN / "sectors.csv")
    return recs, {s: row["sector"] for s, row in table.items()}


class TestGolden:
    @pytest.mark.parametrize("metric_name, name", [("r2_total", "table_r2.csv"), ("rmse_total", "table_rmse.csv"),
                                                   ("rmspe_total", "table_rmspe.csv")])
    def test_matches_golden_file(self, frozen, tmp_path, metric_name, name):
        recs, smap = frozen
        write_sector_csv(tmp_path / name, sector_report(recs, smap, metric_name))
        assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes()

    def test_layout(self):
        with (GOLDEN / "table_rmspe.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["sector", "capm", "fpcr", "fplsr", "pflm"]
        assert [r[0].rsplit(" (", 1)[0] for r in rows[1:12]] == list(GICS_SECTORS)
        assert [r[0] for r in rows[12:]] == ["Mean", "Median"]

    @pytest.mark.parametrize("metric_name", ["r2_total", "rmse_total", "rmspe_total"])
    def test_spreadsheet_recompute(self, frozen, metric_name):
        recs, smap = frozen
        rows = {r.label: r.values for r in sector_report(recs, smap, metric_name)}
        for method in ("capm", "fpcr", "fplsr", "pflm"):
            cells = {r.symbol: getattr(r, metric_name) for r in recs if r.method == method}
            for sector in GICS_SECTORS:
                members = [v for s, v in cells.items() if smap[s] == sector]
                label = f"{sector} ({len(members)})"
                assert rows[label][method] == pytest.approx(sum(members) / len(members), abs=1e-12)
            allv = sorted(cells.values())
            mid = len(allv) // 2
            median = allv[mid] if len(allv) % 2 else (allv[mid - 1] + allv[mid]) / 2
            assert rows["Mean"][method] == pytest.approx(sum(allv) / len(allv), abs=1e-12)
            assert rows["Median"][method] == pytest.approx(median, abs=1e-12)

    def test_json_round_trip(self, frozen, tmp_path):
        recs, _ = frozen
        write_stock_json(tmp_path / "m.json", recs)
        assert (tmp_path / "m.json").read_bytes() == (GOLDEN / "stock_metrics.json").read_bytes()


class TestTtestTable:
    def build(self):
        recs, chars = [], {"size": {}, "noise": {}}
        for i in range(20):
            sym = f"S{i:02d}"
            recs.append(StockMetrics(sym, "Energy", "fpcr", r2_total=0.1 + 0.01 * i + 0.001 * (i % 3),
                                     rmse_total=1.0, rmspe_total=float(i)))
            chars["size"][sym] = float(i)
            chars["noise"][sym] = float((7 * i) % 20)
        return recs, chars

    def test_round_trip_recomputes(self, tmp_path):
        recs, chars = self.build()
        table = ttest_table(recs, chars, methods=["fpcr"])
        write_ttest_csv(tmp_path / "t.csv", table)
        parsed = read_ttest_csv(tmp_path / "t.csv")
        assert set(parsed) == {"noise", "size"}
        assert list(parsed["size"]) == list(TTEST_ROWS)
        for name, cols in table.items():
            for col, g in cols.items():
                assert float(parsed[name]["High"][col]) == g.group_high_mean
                assert float(parsed[name]["Low"][col]) == g.group_low_mean
                assert float(parsed[name]["t.statistic"][col]) == g.t_statistic
                assert float(parsed[name]["p.value"][col]) == g.p_value
                assert parsed[name]["Sig"][col] == g.significance_stars
        # recompute from the groups
        high, low = decile_groups(chars["size"])
        vals = {r.symbol: r.r2_total for r in recs}
        again = two_sample_t([vals[s] for s in high], [vals[s] for s in low])
        assert float(parsed["size"]["t.statistic"]["r2_total_fpcr"]) == again.t_statistic

    def test_missing_characteristic_rejected(self):
        recs, chars = self.build()
        del chars["size"]["S03"]
        with pytest.raises(EvaluationError, match="S03"):
            ttest_table(recs, chars, methods=["fpcr"])
