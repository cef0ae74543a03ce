"""Rolling study: scheduling, isolation, determinism, and evaluation."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from harcov.backtest import (
    BacktestConfig,
    EvalSettings,
    ModelHooks,
    evaluate,
    run_backtest,
)
from harcov.econ import EconSettings
from harcov.errors import (
    AlignmentError,
    ConfigError,
    DimensionError,
    InsufficientHistoryError,
)
from harcov.measures import CovPanel, QuartPanel
from harcov.mvmodels import fit_corr_har
from harcov.statespace import fit_ss, forecast_ss
from harcov.statloss import frobenius_loss
from harcov.synth import SynthConfig, simulate
from harcov.unihar import HarSpec, fit_har, forecast_har


@pytest.fixture(scope="module")
def market():
    return simulate(
        SynthConfig(
            n_assets=3, n_days=160, intraday_count=40, burn_in=30, seed=101
        )
    )


@pytest.fixture(scope="module")
def panel(market):
    config = BacktestConfig(window=100, refit_every=30)
    return run_backtest(market.cov, market.quart, config)


class TestConfig:
    def test_defaults(self):
        cfg = BacktestConfig()
        assert cfg.window == 1000
        assert cfg.refit_every == 30
        assert "HARQL-DRD" in cfg.models

    def test_validation(self):
        with pytest.raises(ConfigError):
            BacktestConfig(window=99)
        with pytest.raises(ConfigError):
            BacktestConfig(refit_every=0)
        with pytest.raises(ConfigError):
            BacktestConfig(models=())
        with pytest.raises(ConfigError):
            BacktestConfig(models=("M-HAR", "M-HAR"))
        with pytest.raises(ConfigError):
            BacktestConfig(forecast_floor=0.0)


class TestRunValidation:
    def test_misaligned_panels(self, market):
        short = QuartPanel(
            market.quart.dates[:-1],
            np.asarray(market.quart.values)[:-1],
            market.asset_ids,
        )
        with pytest.raises(AlignmentError):
            run_backtest(market.cov, short, BacktestConfig(window=100))

    def test_unknown_model(self, market):
        with pytest.raises(ConfigError):
            run_backtest(
                market.cov,
                market.quart,
                BacktestConfig(window=100, models=("M-HAR", "nope")),
            )

    def test_too_short(self, market):
        cov = CovPanel(market.dates[:100], market.cov.mats[:100], market.asset_ids)
        qp = QuartPanel(
            market.dates[:100],
            np.asarray(market.quart.values)[:100],
            market.asset_ids,
        )
        with pytest.raises(InsufficientHistoryError):
            run_backtest(cov, qp, BacktestConfig(window=100))

    def test_extra_model_cannot_shadow_builtin(self, market):
        hooks = ModelHooks(fit=lambda w, c: None, forecast=lambda f, t: np.eye(3))
        with pytest.raises(ConfigError):
            run_backtest(
                market.cov,
                market.quart,
                BacktestConfig(window=100),
                extra_models={"M-HAR": hooks},
            )


class TestSchedule:
    def test_single_day_boundary(self, market):
        t = 101
        cov = CovPanel(market.dates[:t], market.cov.mats[:t], market.asset_ids)
        qp = QuartPanel(
            market.dates[:t], np.asarray(market.quart.values)[:t], market.asset_ids
        )
        out = run_backtest(
            cov, qp, BacktestConfig(window=100, models=("M-HAR", "HAR-DRD"))
        )
        assert out.n_days == 1
        assert out.dates == (market.dates[100],)
        assert np.array_equal(out.refit_days, [True])

    def test_anchored_refit_pattern(self, panel):
        want = np.array([k % 30 == 0 for k in range(60)])
        assert np.array_equal(panel.refit_days, want)

    def test_output_structure(self, panel, market):
        assert panel.n_days == 60
        assert panel.dates == market.dates[100:]
        assert np.array_equal(panel.realized, market.cov.mats[100:])
        assert set(panel.forecasts) == set(panel.models)
        for m in panel.models:
            assert panel.forecasts[m].shape == (60, 3, 3)
            assert np.all(np.isfinite(panel.forecasts[m]))
            assert not panel.forecasts[m].flags.writeable
            assert panel.n_failures[m] == 0
            assert not panel.failed[m].any()
        assert panel.failure_log == ()

    def test_forecasts_differ_across_models(self, panel):
        models = panel.models
        for a in range(len(models)):
            for b in range(a + 1, len(models)):
                assert not np.array_equal(
                    panel.forecasts[models[a]], panel.forecasts[models[b]]
                )

    def test_forecasts_are_psd(self, panel):
        for m in panel.models:
            eig = np.linalg.eigvalsh(panel.forecasts[m])
            assert eig[:, 0].min() > -1e-10


class TestWiring:
    def test_refit_day_matches_direct_fits(self, panel, market):
        """Panel forecasts on a refit day equal hand-built compositions."""
        vol = market.cov.vol_values()
        quart = np.asarray(market.quart.values)
        corr = market.cov.corr_values()
        corr_fit = fit_corr_har(corr[:100])

        from harcov.mvmodels import forecast_corr, forecast_drd

        r = forecast_corr(corr_fit, corr[:100])

        spec = HarSpec(log_target=True, quarticity_term=True)
        var = np.empty(3)
        for i in range(3):
            fit = fit_har(vol[:100, i], quart[:100, i], spec)
            var[i] = forecast_har(fit, vol[:100, i], float(quart[99, i]))
        assert np.array_equal(
            panel.forecasts["HARQL-DRD"][0], forecast_drd(var, r)
        )

        for i in range(3):
            fit = fit_ss(vol[:100, i], log_target=False)
            var[i] = forecast_ss(fit, vol[:100, i])
        assert np.array_equal(
            panel.forecasts["HARS-DRD"][0], forecast_drd(var, r)
        )

    def test_stale_fit_day_uses_latest_data(self, panel, market):
        """Between refits the HAR forecast uses stale betas on new lags."""
        vol = market.cov.vol_values()
        spec = HarSpec()
        fit = fit_har(vol[:100, 0], None, spec)  # fitted at k = 0
        k = 7  # stale day: fit from k=0, data through day 106
        fc = forecast_har(fit, vol[k : 100 + k, 0])
        d = np.sqrt(np.diagonal(panel.forecasts["HAR-DRD"][k]))
        assert_allclose(d[0] ** 2, fc, rtol=1e-12)


class TestDeterminism:
    MODELS = ("M-HAR", "M-HARQ", "HARQ-DRD", "HARQL-DRD")

    def test_rerun_is_byte_identical(self, market):
        cfg = BacktestConfig(window=100, refit_every=20, models=self.MODELS)
        a = run_backtest(market.cov, market.quart, cfg)
        b = run_backtest(market.cov, market.quart, cfg)
        for m in self.MODELS:
            assert np.array_equal(a.forecasts[m], b.forecasts[m])

    def test_thread_count_does_not_matter(self, market):
        cfg = BacktestConfig(window=100, refit_every=20, models=self.MODELS)
        a = run_backtest(market.cov, market.quart, cfg, threads=1)
        b = run_backtest(market.cov, market.quart, cfg, threads=4)
        for m in self.MODELS:
            assert np.array_equal(a.forecasts[m], b.forecasts[m])

    def test_no_lookahead(self, market):
        """Extending the panel never changes earlier forecasts."""
        models = ("M-HAR", "HARQ-DRD", "HARSL-DRD")
        cfg = BacktestConfig(window=100, refit_every=25, models=models)

        def run(t):
            cov = CovPanel(market.dates[:t], market.cov.mats[:t], market.asset_ids)
            qp = QuartPanel(
                market.dates[:t],
                np.asarray(market.quart.values)[:t],
                market.asset_ids,
            )
            return run_backtest(cov, qp, cfg)

        short = run(140)
        full = run(160)
        for m in models:
            assert np.array_equal(
                short.forecasts[m], full.forecasts[m][: short.n_days]
            )


class TestFailureIsolation:
    MODELS = ("M-HAR", "HAR-DRD")

    def _run(self, market, hooks, extra_name="probe"):
        cfg = BacktestConfig(
            window=100,
            refit_every=30,
            models=self.MODELS + (extra_name,),
        )
        return run_backtest(
            market.cov, market.quart, cfg, extra_models={extra_name: hooks}
        )

    def test_fit_failure_marks_whole_block(self, market):
        calls = {"n": 0}

        def fit(win, corr_fit):
            calls["n"] += 1
            if calls["n"] == 2:  # second refit dies
                raise RuntimeError("boom")
            return "ok"

        hooks = ModelHooks(fit=fit, forecast=lambda f, t: np.eye(3))
        out = self._run(market, hooks)
        # second refit covers out-of-sample days 30..59
        assert np.array_equal(
            out.failed["probe"], np.arange(60) >= 30
        )
        assert out.n_failures["probe"] == 30
        for m in self.MODELS:
            assert out.n_failures[m] == 0
        assert np.isnan(out.forecasts["probe"][30]).all()
        assert any("boom" in msg for _, model, msg in out.failure_log
                   if model == "probe")

    def test_forecast_failure_is_per_day(self, market):
        day = {"k": -1}

        def forecast(fitobj, trail):
            day["k"] += 1
            if day["k"] == 5:
                raise RuntimeError("bad day")
            return np.eye(3)

        hooks = ModelHooks(fit=lambda w, c: "ok", forecast=forecast)
        out = self._run(market, hooks)
        assert out.n_failures["probe"] == 1
        assert out.failed["probe"][5]
        assert not out.failed["probe"][4]

    def test_bad_forecast_shape_is_failure(self, market):
        hooks = ModelHooks(fit=lambda w, c: "ok", forecast=lambda f, t: np.eye(2))
        out = self._run(market, hooks)
        assert out.n_failures["probe"] == 60
        for m in self.MODELS:
            assert out.n_failures[m] == 0

    def test_nonfinite_forecast_is_failure(self, market):
        bad = np.full((3, 3), np.nan)
        hooks = ModelHooks(fit=lambda w, c: "ok", forecast=lambda f, t: bad)
        out = self._run(market, hooks)
        assert out.n_failures["probe"] == 60

    def test_builtins_unchanged_by_extra_model(self, market):
        cfg = BacktestConfig(window=100, refit_every=30, models=self.MODELS)
        plain = run_backtest(market.cov, market.quart, cfg)
        hooks = ModelHooks(fit=lambda w, c: "ok", forecast=lambda f, t: np.eye(3))
        with_extra = self._run(market, hooks)
        for m in self.MODELS:
            assert np.array_equal(plain.forecasts[m], with_extra.forecasts[m])

    def test_constant_correlation_poisons_drd_only(self):
        # fixed correlation matrix makes the correlation design collinear,
        # so every DRD model fails while the pooled model keeps going
        rng = np.random.default_rng(7)
        t, n = 120, 3
        r = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
        mats = np.empty((t, n, n))
        vol = 1.0 + 0.3 * rng.random((t, n))
        for i in range(t):
            d = np.sqrt(vol[i])
            mats[i] = (d[:, None] * r) * d[None, :]
        import datetime

        d0 = datetime.date(2004, 1, 1)
        dates = tuple(
            (d0 + datetime.timedelta(days=i)).isoformat() for i in range(t)
        )
        cov = CovPanel(dates, mats, ("A", "B", "C"))
        qp = QuartPanel(dates, vol**2, ("A", "B", "C"))
        out = run_backtest(
            cov, qp, BacktestConfig(window=100, models=("M-HAR", "HAR-DRD"))
        )
        assert out.n_failures["M-HAR"] == 0
        assert out.n_failures["HAR-DRD"] == 20
        assert any("correlation fit" in msg for _, _, msg in out.failure_log)


class TestFloorCounting:
    def test_level_forecasts_floored(self, market):
        cfg = BacktestConfig(
            window=100,
            refit_every=30,
            models=("HAR-DRD", "HARL-DRD"),
            forecast_floor=1e3,  # far above any reasonable variance
        )
        out = run_backtest(market.cov, market.quart, cfg)
        assert out.floored["HAR-DRD"] == 60 * 3
        assert out.floored["HARL-DRD"] == 0  # log model never clips
        for i in range(3):
            assert np.all(out.forecasts["HAR-DRD"][:, i, i] == 1e3)


@pytest.fixture(scope="module")
def report(panel, market):
    settings = EvalSettings(
        n_bootstrap=300,
        econ=EconSettings(
            cost_levels=(0.0, 0.01), gammas=(1.0, 10.0), base_model="HARQL-DRD"
        ),
    )
    return evaluate(
        panel, market.quart, market.dates, market.returns_pct, settings
    )


class TestEvaluate:
    def test_common_days(self, report, panel):
        assert report.n_common_days == 60
        assert report.n_qlike_days == 60
        assert report.model_ids == panel.models

    def test_loss_rows_layout(self, report, panel):
        k = len(panel.models)
        assert len(report.loss_rows) == 3 * k
        by_sample = {}
        for row in report.loss_rows:
            by_sample.setdefault(row.sample, []).append(row)
        assert set(by_sample) == {"full", "low_rq", "high_rq"}
        assert all(r.n_days == 60 for r in by_sample["full"])
        assert all(r.n_days == 30 for r in by_sample["low_rq"])
        assert all(r.n_days == 30 for r in by_sample["high_rq"])
        for row in report.loss_rows:
            assert np.isfinite(row.frobenius_mean)
            assert np.isfinite(row.qlike_mean)

    def test_loss_mean_matches_direct_computation(self, report, panel):
        m = "M-HAR"
        manual = np.mean(
            [
                frobenius_loss(panel.realized[i], panel.forecasts[m][i])
                for i in range(60)
            ]
        )
        row = next(
            r for r in report.loss_rows if r.model_id == m and r.sample == "full"
        )
        assert_allclose(row.frobenius_mean, manual, rtol=1e-12)
        series = report.loss_series[m]
        assert_allclose(series.frobenius.mean(), manual, rtol=1e-12)
        assert series.n_excluded == 0

    def test_dm_matrices(self, report, panel):
        k = len(panel.models)
        for key in (("frobenius", "full"), ("qlike", "full"),
                    ("frobenius", "low_rq"), ("qlike", "high_rq")):
            dmm = report.dm[key]
            assert dmm is not None
            assert dmm.statistics.shape == (k, k)
            assert np.array_equal(np.diagonal(dmm.statistics), np.zeros(k))
            assert np.array_equal(dmm.statistics, -dmm.statistics.T)
            off = ~np.eye(k, dtype=bool)
            assert np.all(dmm.p_values[off] > 0.0)
            assert np.all(dmm.p_values[off] < 1.0)

    def test_mcs_only_on_long_samples(self, report):
        assert report.mcs_results[("frobenius", "full")] is not None
        assert report.mcs_results[("qlike", "full")] is not None
        assert report.mcs_results[("frobenius", "low_rq")] is None
        assert report.mcs_results[("qlike", "high_rq")] is None
        for row in report.loss_rows:
            if row.sample == "full":
                assert isinstance(row.in_mcs_frobenius, bool)
            else:
                assert row.in_mcs_frobenius is None

    def test_econ_regimes(self, report, panel):
        assert set(report.econ) == {"unrestricted", "long_only"}
        assert report.base_model == "HARQL-DRD"
        for regime, rep in report.econ.items():
            assert set(rep.rows) == set(panel.models)
            assert rep.long_only == (regime == "long_only")
            for row in rep.rows.values():
                assert set(row.by_cost) == {0.0, 0.01}
        lo = report.econ["long_only"]
        assert all(row.short_mean == 0.0 for row in lo.rows.values())
        assert report.notes == ()

    def test_base_model_fallback_note(self, market):
        cfg = BacktestConfig(window=100, models=("M-HAR", "HAR-DRD"))
        out = run_backtest(market.cov, market.quart, cfg)
        settings = EvalSettings(
            n_bootstrap=300,
            econ=EconSettings(cost_levels=(0.0,), gammas=(1.0,)),
        )
        rep = evaluate(
            out, market.quart, market.dates, market.returns_pct, settings
        )
        assert rep.base_model == "M-HAR"
        assert any("base model" in note for note in rep.notes)

    def test_returns_validation(self, panel, market):
        with pytest.raises(DimensionError):
            evaluate(panel, market.quart, market.dates, market.returns_pct[:, :2])
        with pytest.raises(AlignmentError):
            evaluate(
                panel,
                market.quart,
                market.dates[:150],
                market.returns_pct[:150],
            )

    def test_failed_days_drop_out_of_comparison(self, market):
        flaky = {"k": -1}

        def forecast(fitobj, trail):
            flaky["k"] += 1
            if flaky["k"] < 3:
                raise RuntimeError("warmup")
            return np.eye(3) * trail.vol[-1].mean()

        hooks = ModelHooks(fit=lambda w, c: "ok", forecast=forecast)
        cfg = BacktestConfig(
            window=100, refit_every=30, models=("M-HAR", "HAR-DRD", "probe")
        )
        out = run_backtest(
            market.cov, market.quart, cfg, extra_models={"probe": hooks}
        )
        assert out.n_failures["probe"] == 3
        rep = evaluate(
            out,
            market.quart,
            market.dates,
            market.returns_pct,
            EvalSettings(n_bootstrap=300, econ=EconSettings(
                cost_levels=(0.0,), gammas=(1.0,), base_model="M-HAR")),
        )
        assert rep.n_common_days == 57
        assert rep.loss_series["M-HAR"].dates == out.dates[3:]
