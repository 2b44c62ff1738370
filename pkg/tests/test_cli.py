import json
import subprocess
import sys

import numpy as np
import pytest

from fcapm import cli
from fcapm.config import ConfigError, RunConfig, load_config
from fcapm.evaluation import (
    StockMetrics,
    decile_groups,
    expanding_window,
    read_stock_json,
    read_ttest_csv,
    two_sample_t,
    write_stock_json,
)
from fcapm.ingest import TickSeries, read_ticks, read_yields, write_ticks
from fcapm.methods import MethodConfig
from fcapm.simulator import DatasetScenario, StockSpec

FAST = ["--kappa-grid", "1e-4,1e-2,1,100", "--pls-components", "3", "-q"]


def make_dataset(root, n_days=31, stocks=None, seed=1):
    stocks = stocks or [
        {"symbol": "AAA", "sector": "Energy", "surface": "sin_cos", "sigma": 0.2},
        {"symbol": "BBB", "sector": "Utilities", "surface": "v_linear", "sigma": 0.1},
    ]
    root.mkdir(parents=True, exist_ok=True)
    scen = root / "scenario.json"
    DatasetScenario(n_days=n_days, seed=seed, stocks=[StockSpec(**s) for s in stocks]).to_json(scen)
    data = root / "data"
    assert cli.main(["simulate", "--scenario", str(scen), "--out", str(data), "-q"]) == 0
    return data


def run_args(data, out, *extra):
    return ["--ticks", str(data / "ticks.csv"), "--yields", str(data / "yields.csv"),
            "--sectors", str(data / "sectors.csv"), "--out", str(out), *extra]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return make_dataset(tmp_path_factory.mktemp("ds"))


class TestFit:
    def test_four_rows_per_stock(self, dataset, tmp_path):
        assert cli.main(["fit", *run_args(dataset, tmp_path), *FAST]) == 0
        recs = read_stock_json(tmp_path / "fit_metrics.json")
        assert [(r.symbol, r.method) for r in recs] == [
            (s, m) for s in ("AAA", "BBB") for m in ("capm", "fpcr", "fplsr", "pflm")
        ]
        assert all(r.r2_total is not None and r.rmse_total is not None for r in recs)
        for m in ("fpcr", "fplsr", "pflm"):
            vals = np.loadtxt(tmp_path / "surfaces" / f"AAA_{m}.csv", delimiter=",", skiprows=1)
            assert vals.shape == (78, 79)
        assert (tmp_path / "surfaces" / "AAA_pflm_bic.csv").read_text().startswith("kappa,bic\n")
        header = (tmp_path / "table_rmse.csv").read_text().splitlines()[0]
        assert header == "sector,capm,fpcr,fplsr,pflm"

    def test_rerun_byte_identical(self, dataset, tmp_path):
        for name in ("a", "b"):
            assert cli.main(["fit", *run_args(dataset, tmp_path / name), *FAST]) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f

    def test_parallel_matches_serial(self, dataset, tmp_path, monkeypatch):
        assert cli.main(["fit", *run_args(dataset, tmp_path / "serial"), *FAST, "--jobs", "1"]) == 0
        monkeypatch.setenv("FCAPM_JOBS", "2")
        assert cli.main(["fit", *run_args(dataset, tmp_path / "pool"), *FAST]) == 0
        for name in ("fit_metrics.json", "fit_curves.csv", "table_r2.csv"):
            assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "pool" / name).read_bytes()

    def test_missing_yield_date_named(self, dataset, tmp_path, capsys):
        lines = (dataset / "yields.csv").read_text().splitlines()
        dropped = lines.pop(5)
        (tmp_path / "y.csv").write_text("\n".join(lines) + "\n")
        args = run_args(dataset, tmp_path / "out", *FAST)
        args[args.index("--yields") + 1] = str(tmp_path / "y.csv")
        assert cli.main(["fit", *args]) == cli.EXIT_INPUT
        assert dropped.split(",")[0] in capsys.readouterr().err

    @pytest.mark.parametrize("damage", ["constant", "missing_day"])
    def test_stock_failure_exit_code(self, dataset, tmp_path, damage):
        ticks = read_ticks(dataset / "ticks.csv")
        aaa = ticks["AAA"]
        if damage == "constant":
            ticks["AAA"] = TickSeries("AAA", aaa.days, np.full_like(aaa.prices, 50.0))
        else:
            ticks["AAA"] = TickSeries("AAA", aaa.days[:10] + aaa.days[11:], np.delete(aaa.prices, 10, axis=0))
        write_ticks(tmp_path / "ticks.csv", [ticks[s] for s in sorted(ticks)])
        args = run_args(dataset, tmp_path / "out", *FAST)
        args[args.index("--ticks") + 1] = str(tmp_path / "ticks.csv")
        assert cli.main(["fit", *args]) == cli.EXIT_STOCK_FAILED
        recs = read_stock_json(tmp_path / "out" / "fit_metrics.json")
        assert {r.symbol for r in recs if r.method == "fpcr"} == {"BBB"}


class TestForecast:
    def test_single_window(self, dataset, tmp_path):
        # 31 simulated days leave 30 after the first close-to-close return
        assert cli.main(["forecast", *run_args(dataset, tmp_path), *FAST, "--n-train", "29"]) == 0
        recs = read_stock_json(tmp_path / "forecast_metrics.json")
        assert len(recs) == 8 and all(r.rmspe_total is not None for r in recs)

    def test_too_few_days_fails(self, dataset, tmp_path):
        assert cli.main(["forecast", *run_args(dataset, tmp_path), *FAST, "--n-train", "30"]) == cli.EXIT_STOCK_FAILED

    def test_zero_method_and_plumbing(self, dataset, tmp_path):
        argv = ["forecast", *run_args(dataset, tmp_path), *FAST, "--n-train", "20", "--methods", "zero,fpcr"]
        assert cli.main(argv) == 0
        recs = {(r.symbol, r.method): r for r in read_stock_json(tmp_path / "forecast_metrics.json")}
        ticks, rf = read_ticks(dataset / "ticks.csv"), read_yields(dataset / "yields.csv")
        data = cli.stock_data(ticks["AAA"], ticks["SPX"], rf, "flat")
        test = data.y.curves[20:]
        rms = np.sqrt(np.mean(test**2, axis=0))
        w = np.full(78, 1 / 77)
        w[[0, -1]] /= 2
        assert recs[("AAA", "zero")].rmspe_total == pytest.approx(w @ rms, rel=1e-12)
        direct, _ = expanding_window(data, "fpcr", 20, RunConfig(pls_components=3).method_config())
        assert recs[("AAA", "fpcr")].rmspe_total == float(f"{direct.rmspe_total:.17g}")


class TestTtest:
    def write_metrics(self, out, n=30):
        recs = []
        for i in range(n):
            value = (1.0 if i >= n // 2 else 0.0) + 1e-9 * i
            recs.append(StockMetrics(f"S{i:02d}", "Energy", "fpcr", r2_total=value, rmse_total=0.5 + 0.01 * i))
        out.mkdir(parents=True, exist_ok=True)
        write_stock_json(out / "fit_metrics.json", recs)
        return recs

    def test_separated_groups_starred(self, tmp_path):
        self.write_metrics(tmp_path / "out")
        chars = tmp_path / "chars.csv"
        chars.write_text("symbol,size\n" + "".join(f"S{i:02d},{i}\n" for i in range(30)))
        argv = ["ttest", "--out", str(tmp_path / "out"), "--characteristics", str(chars), "--methods", "fpcr", "-q"]
        assert cli.main(argv) == 0
        parsed = read_ttest_csv(tmp_path / "out" / "ttest.csv")
        assert parsed["size"]["Sig"]["r2_total_fpcr"] == "***"
        # re-parse and recompute
        recs = read_stock_json(tmp_path / "out" / "fit_metrics.json")
        high, low = decile_groups({f"S{i:02d}": float(i) for i in range(30)})
        vals = {r.symbol: r.rmse_total for r in recs}
        g = two_sample_t([vals[s] for s in high], [vals[s] for s in low])
        assert float(parsed["size"]["t.statistic"]["rmse_total_fpcr"]) == g.t_statistic
        assert float(parsed["size"]["p.value"]["rmse_total_fpcr"]) == g.p_value

    def test_identical_characteristic_rejected(self, tmp_path, capsys):
        self.write_metrics(tmp_path / "out")
        chars = tmp_path / "chars.csv"
        chars.write_text("symbol,flat\n" + "".join(f"S{i:02d},1\n" for i in range(30)))
        argv = ["ttest", "--out", str(tmp_path / "out"), "--characteristics", str(chars), "-q"]
        assert cli.main(argv) == cli.EXIT_INPUT
        assert "identical" in capsys.readouterr().err

    def test_missing_symbol_named(self, tmp_path, capsys):
        self.write_metrics(tmp_path / "out")
        chars = tmp_path / "chars.csv"
        chars.write_text("symbol,size\n" + "".join(f"S{i:02d},{i}\n" for i in range(29)))
        argv = ["ttest", "--out", str(tmp_path / "out"), "--characteristics", str(chars), "-q"]
        assert cli.main(argv) == cli.EXIT_INPUT
        assert "S29" in capsys.readouterr().err

    def test_end_to_end_after_fit(self, dataset, tmp_path):
        ds = make_dataset(tmp_path / "four", stocks=[
            {"symbol": f"Z{k}", "sector": "Energy", "surface": "sin_cos", "sigma": 0.1 * (k + 1)} for k in range(4)
        ])
        out = tmp_path / "out"
        assert cli.main(["fit", *run_args(ds, out), *FAST]) == 0
        argv = ["ttest", "--out", str(out), "--characteristics", str(ds / "characteristics.csv"), "-q"]
        assert cli.main(argv) == 0
        parsed = read_ttest_csv(out / "ttest.csv")
        assert list(parsed) == ["noise"]
        assert "rmse_total_pflm" in parsed["noise"]["t.statistic"]


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert (cfg.n_basis, cfg.order, cfg.threshold, cfg.n_train, cfg.rf_mode) == (20, 4, 0.95, 200, "flat")

    def test_file_and_override(self, tmp_path):
        (tmp_path / "c.json").write_text('{"threshold": 0.9, "n_train": 50}')
        cfg = load_config(tmp_path / "c.json", {"n_train": 60, "threshold": None})
        assert (cfg.threshold, cfg.n_train) == (0.9, 60)

    def test_invalid_field_names_line(self, tmp_path):
        (tmp_path / "c.json").write_text('{\n  "n_basis": 20,\n  "threshold": 1.5\n}')
        with pytest.raises(ConfigError, match=r"c\.json:3: field 'threshold'"):
            load_config(tmp_path / "c.json")

    def test_unknown_field(self, tmp_path):
        (tmp_path / "c.json").write_text('{\n  "thresold": 0.9\n}')
        with pytest.raises(ConfigError, match=r":2: unknown field 'thresold'"):
            load_config(tmp_path / "c.json")

    def test_bad_json_line(self, tmp_path):
        (tmp_path / "c.json").write_text('{\n  "n_basis": 20,\n  oops\n}')
        with pytest.raises(ConfigError, match=r"c\.json:3: invalid JSON"):
            load_config(tmp_path / "c.json")

    def test_override_reported_as_command_line(self):
        with pytest.raises(ConfigError, match="command line: field 'methods'"):
            load_config(None, {"methods": ["nope"]})

    def test_round_trip(self, tmp_path):
        cfg = RunConfig(threshold=0.9, methods=["fpcr"], kappa_grid=[1.0, 2.0])
        cfg.to_json(tmp_path / "c.json")
        assert load_config(tmp_path / "c.json") == cfg

    def test_method_config(self):
        mc = RunConfig(kappa_grid=[1.0], pls_components="full").method_config()
        assert mc == MethodConfig(kappa_grid=(1.0,), pls_components="full")

    def test_config_error_exit(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text('{"order": 1}')
        assert cli.main(["fit", "--config", str(tmp_path / "c.json")]) == cli.EXIT_INPUT
        assert "'order'" in capsys.readouterr().err


class TestJobs:
    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("FCAPM_JOBS", "3")
        assert cli._jobs(None) == 3
        assert cli._jobs("2") == 2

    def test_default_one(self, monkeypatch):
        monkeypatch.delenv("FCAPM_JOBS", raising=False)
        assert cli._jobs(None) == 1

    @pytest.mark.parametrize("bad", ["0", "x"])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            cli._jobs(bad)


def test_selftest_command(capsys):
    assert cli.main(["selftest"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5 and all(line.startswith("PASS") for line in lines)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fcapm", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("fcapm ")


def test_simulate_writes_scenario(tmp_path):
    assert cli.main(["simulate", "--out", str(tmp_path), "--n-days", "5", "--seed", "7", "-q"]) == 0
    scen = json.loads((tmp_path / "scenario.json").read_text())
    assert (scen["n_days"], scen["seed"], len(scen["stocks"])) == (5, 7, 11)
