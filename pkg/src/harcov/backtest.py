"""Rolling-window forecasting study and its statistical/economic report.

run_backtest walks a covariance panel day by day: models are refit on
the trailing estimation window on an anchored schedule (first
out-of-sample day, then every refit_every days) and produce a one-step
forecast every day from the latest trailing data, so parameters go
stale between refits but information never does. Model failures are
isolated: a model that cannot fit or forecast is marked failed for the
affected days and every other model proceeds.

evaluate turns the forecast panel into the full report: Frobenius and
Q-Like loss tables on the full sample and on calm/noisy subsamples
split by realized quarticity, pairwise equal-accuracy tests, model
confidence sets, and the portfolio comparison under unrestricted and
long-only minimum-variance rules.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .econ import EconReport, EconSettings, econ_report, track_portfolio
from .errors import (
    AlignmentError,
    ConfigError,
    DimensionError,
    InsufficientHistoryError,
)
from .measures import CovPanel, QuartPanel, vech_indices
from .mvmodels import (
    ProjectionCounter,
    fit_corr_har,
    fit_mhar,
    fit_mharq,
    forecast_corr,
    forecast_drd,
    forecast_mv,
)
from .statespace import fit_ss, refilter_forecast
from .statloss import LossSeries, McsResult, dm_test, mcs, qlike_loss, frobenius_loss, quarticity_split
from .unihar import FORECAST_FLOOR, HarSpec, fit_har, forecast_har

MODEL_IDS = (
    "M-HAR",
    "M-HARQ",
    "HAR-DRD",
    "HARL-DRD",
    "HARQ-DRD",
    "HARQL-DRD",
    "HARS-DRD",
    "HARSL-DRD",
)

DEFAULT_MODELS = (
    "M-HAR",
    "HAR-DRD",
    "HARL-DRD",
    "HARQ-DRD",
    "HARQL-DRD",
    "HARS-DRD",
    "HARSL-DRD",
)

_HAR_SPECS = {
    "HAR-DRD": HarSpec(log_target=False, quarticity_term=False),
    "HARL-DRD": HarSpec(log_target=True, quarticity_term=False),
    "HARQ-DRD": HarSpec(log_target=False, quarticity_term=True),
    "HARQL-DRD": HarSpec(log_target=True, quarticity_term=True),
}

_SS_MODELS = {"HARS-DRD": False, "HARSL-DRD": True}


@dataclass(frozen=True)
class BacktestConfig:
    """Rolling study layout.

    window is the estimation length (at least 100 so every model has
    lag history to spare); refits happen on the first out-of-sample
    day and every refit_every days after it.
    """

    window: int = 1000
    refit_every: int = 30
    models: tuple[str, ...] = DEFAULT_MODELS
    forecast_floor: float = FORECAST_FLOOR

    def __post_init__(self):
        if self.window < 100:
            raise ConfigError("window must be at least 100 days")
        if self.refit_every < 1:
            raise ConfigError("refit_every must be at least 1")
        models = tuple(self.models)
        if not models:
            raise ConfigError("at least one model is required")
        if len(set(models)) != len(models):
            raise ConfigError("duplicate model ids")
        object.__setattr__(self, "models", models)
        if not self.forecast_floor > 0.0:
            raise ConfigError("forecast floor must be positive")


@dataclass(frozen=True)
class SliceView:
    """Array views over one stretch of days, shared by all models."""

    vol: np.ndarray
    quart: np.ndarray
    vech: np.ndarray
    corr: np.ndarray
    pi: np.ndarray | None


@dataclass(frozen=True)
class ModelHooks:
    """Plug-in model: fit gets the estimation window plus the shared
    correlation fit (or None), forecast gets the stale fit object and
    the trailing window. Used to inject additional models, including
    deliberately failing ones in the fault-isolation tests."""

    fit: Callable[[SliceView, object], object]
    forecast: Callable[[object, SliceView], np.ndarray]


@dataclass(frozen=True, eq=False)
class ForecastPanel:
    """Out-of-sample forecasts, realizations and bookkeeping."""

    dates: tuple[str, ...]
    asset_ids: tuple[str, ...]
    models: tuple[str, ...]
    forecasts: dict[str, np.ndarray]
    realized: np.ndarray
    failed: dict[str, np.ndarray]
    refit_days: np.ndarray
    n_failures: dict[str, int]
    floored: dict[str, int]
    corr_projections: int
    failure_log: tuple[tuple[str, str, str], ...]
    config: BacktestConfig

    @property
    def n_days(self) -> int:
        return len(self.dates)


@dataclass
class _DrdFit:
    var_fits: list
    corr_fit: object
    model: str


def _fit_model(model: str, win: SliceView, corr_fit, floor: float):
    if model == "M-HAR":
        return fit_mhar(win.vech)
    if model == "M-HARQ":
        return fit_mharq(win.vech, win.pi)
    if corr_fit is None:
        raise ConfigError("shared correlation fit unavailable")
    if model in _HAR_SPECS:
        spec = _HAR_SPECS[model]
        fits = []
        for i in range(win.vol.shape[1]):
            rq = win.quart[:, i] if spec.quarticity_term else None
            fits.append(fit_har(win.vol[:, i], rq, spec))
        return _DrdFit(fits, corr_fit, model)
    if model in _SS_MODELS:
        log_target = _SS_MODELS[model]
        fits = [fit_ss(win.vol[:, i], log_target) for i in range(win.vol.shape[1])]
        return _DrdFit(fits, corr_fit, model)
    raise ConfigError(f"unknown model {model!r}")


def _forecast_model(
    model: str,
    fitobj,
    trail: SliceView,
    counter: ProjectionCounter,
    floor: float,
) -> tuple[np.ndarray, int]:
    """Returns (forecast matrix, number of floored variance entries)."""
    if model == "M-HAR":
        mat = forecast_mv(fitobj, trail.vech, floor=floor)
        return mat, int(np.sum(np.diagonal(mat) == floor))
    if model == "M-HARQ":
        pi_last = None if fitobj.alpha_1q is None else trail.pi[-1]
        mat = forecast_mv(fitobj, trail.vech, pi_last=pi_last, floor=floor)
        return mat, int(np.sum(np.diagonal(mat) == floor))
    drd: _DrdFit = fitobj
    n = trail.vol.shape[1]
    var = np.empty(n)
    floored = 0
    if model in _HAR_SPECS:
        spec = _HAR_SPECS[model]
        for i in range(n):
            rq_last = float(trail.quart[-1, i]) if spec.quarticity_term else None
            var[i] = forecast_har(drd.var_fits[i], trail.vol[:, i], rq_last, floor)
            floored += int(var[i] == floor and not spec.log_target)
    else:
        log_target = _SS_MODELS[model]
        for i in range(n):
            var[i] = refilter_forecast(
                drd.var_fits[i].params, trail.vol[:, i], log_target, floor
            )
            floored += int(var[i] == floor and not log_target)
    corr = forecast_corr(drd.corr_fit, trail.corr, counter)
    return forecast_drd(var, corr), floored


def run_backtest(
    cov: CovPanel,
    quart: QuartPanel,
    config: BacktestConfig = BacktestConfig(),
    extra_models: Mapping[str, ModelHooks] | None = None,
    threads: int = 1,
) -> ForecastPanel:
    """Roll the configured models through the panel.

    Needs at least window + 1 days; the out-of-sample stretch covers
    days window .. T-1. Results are independent of ``threads`` (fits
    are deterministic functions of the window).
    """
    if cov.dates != quart.dates:
        raise AlignmentError("covariance and quarticity panels must share dates")
    if cov.asset_ids != quart.asset_ids:
        raise AlignmentError("covariance and quarticity panels must share assets")
    extra_models = dict(extra_models or {})
    for name in extra_models:
        if name in MODEL_IDS:
            raise ConfigError(f"extra model {name!r} shadows a built-in id")
    for name in config.models:
        if name not in MODEL_IDS and name not in extra_models:
            raise ConfigError(f"unknown model {name!r}")
    t_all = cov.n_days
    window = config.window
    if t_all < window + 1:
        raise InsufficientHistoryError(
            f"need at least window + 1 = {window + 1} days, got {t_all}"
        )

    n = cov.n_assets
    vol_all = cov.vol_values()
    vech_all = cov.vech_values()
    corr_all = cov.corr_values()
    quart_all = np.asarray(quart.values)
    pi_all = None
    if any(m == "M-HARQ" for m in config.models) or extra_models:
        rows, cols = vech_indices(n)
        pi_all = (quart_all[:, rows] * quart_all[:, cols]) ** 0.25

    def view(lo: int, hi: int) -> SliceView:
        return SliceView(
            vol=vol_all[lo:hi],
            quart=quart_all[lo:hi],
            vech=vech_all[lo:hi],
            corr=corr_all[lo:hi],
            pi=None if pi_all is None else pi_all[lo:hi],
        )

    models = config.models
    n_oos = t_all - window
    oos_dates = cov.dates[window:]
    forecasts = {m: np.full((n_oos, n, n), np.nan) for m in models}
    failed = {m: np.zeros(n_oos, dtype=bool) for m in models}
    floored = {m: 0 for m in models}
    refit_days = np.zeros(n_oos, dtype=bool)
    counter = ProjectionCounter()
    failure_log: list[tuple[str, str, str]] = []
    fits: dict[str, object] = {}
    fit_errors: dict[str, str] = {}

    def fit_one(model: str, win: SliceView, corr_fit):
        if model in extra_models:
            return extra_models[model].fit(win, corr_fit)
        return _fit_model(model, win, corr_fit, config.forecast_floor)

    for k in range(n_oos):
        t = window + k
        win = view(t - window, t)
        if k % config.refit_every == 0:
            refit_days[k] = True
            needs_corr = any(m.endswith("-DRD") for m in models)
            corr_fit = None
            corr_err: str | None = None
            if needs_corr or extra_models:
                try:
                    corr_fit = fit_corr_har(win.corr)
                except Exception as exc:  # isolate: every DRD model fails
                    corr_err = f"correlation fit: {exc}"
            fits.clear()
            fit_errors.clear()

            def run_fit(model: str):
                if corr_err is not None and model.endswith("-DRD"):
                    return model, None, corr_err
                try:
                    return model, fit_one(model, win, corr_fit), None
                except Exception as exc:
                    return model, None, f"fit: {exc}"

            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    results = list(pool.map(run_fit, models))
            else:
                results = [run_fit(m) for m in models]
            for model, fitobj, err in results:
                if err is None:
                    fits[model] = fitobj
                else:
                    fit_errors[model] = err
                    if len(failure_log) < 50:
                        failure_log.append((cov.dates[t], model, err))

        trail = win
        for model in models:
            if model in fit_errors:
                failed[model][k] = True
                continue
            try:
                if model in extra_models:
                    mat = np.asarray(
                        extra_models[model].forecast(fits[model], trail), dtype=float
                    )
                    flo = 0
                else:
                    mat, flo = _forecast_model(
                        model, fits[model], trail, counter, config.forecast_floor
                    )
                if mat.shape != (n, n) or not np.all(np.isfinite(mat)):
                    raise DimensionError("forecast must be a finite (N, N) matrix")
            except Exception as exc:
                failed[model][k] = True
                if len(failure_log) < 50:
                    failure_log.append((oos_dates[k], model, f"forecast: {exc}"))
                continue
            forecasts[model][k] = mat
            floored[model] += flo

    for m in models:
        forecasts[m].flags.writeable = False
    realized = cov.mats[window:]
    return ForecastPanel(
        dates=oos_dates,
        asset_ids=cov.asset_ids,
        models=models,
        forecasts=forecasts,
        realized=realized,
        failed=failed,
        refit_days=refit_days,
        n_failures={m: int(failed[m].sum()) for m in models},
        floored=floored,
        corr_projections=counter.count,
        failure_log=tuple(failure_log),
        config=config,
    )


# ---------------------------------------------------------------------------
# evaluation

SAMPLES = ("full", "low_rq", "high_rq")
LOSSES = ("frobenius", "qlike")


@dataclass(frozen=True)
class EvalSettings:
    """Evaluation knobs: confidence-set parameters and the economic grid."""

    mcs_alpha: float = 0.10
    n_bootstrap: int = 1000
    block_len: int | None = None
    seed: int = 0
    econ: EconSettings = EconSettings()
    long_only_regimes: tuple[bool, ...] = (False, True)


@dataclass(frozen=True)
class DmMatrix:
    """Pairwise equal-accuracy tests; entry (i, j) compares model i
    against model j, small p-values favoring model i."""

    model_ids: tuple[str, ...]
    statistics: np.ndarray
    p_values: np.ndarray


@dataclass(frozen=True)
class LossRow:
    model_id: str
    sample: str
    n_days: int
    frobenius_mean: float
    qlike_mean: float
    in_mcs_frobenius: bool | None
    in_mcs_qlike: bool | None


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Everything evaluate produces, ready for serialization."""

    model_ids: tuple[str, ...]
    loss_rows: tuple[LossRow, ...]
    loss_series: dict[str, LossSeries]
    dm: dict[tuple[str, str], DmMatrix | None]
    mcs_results: dict[tuple[str, str], McsResult | None]
    econ: dict[str, EconReport]
    n_common_days: int
    n_qlike_days: int
    base_model: str
    notes: tuple[str, ...]


def evaluate(
    panel: ForecastPanel,
    quart: QuartPanel,
    returns_dates,
    returns_pct: np.ndarray,
    settings: EvalSettings = EvalSettings(),
) -> EvalReport:
    """Score a forecast panel statistically and economically.

    returns_pct holds daily percent returns for at least every
    out-of-sample date. Cross-model comparisons (tests, confidence
    sets, portfolios) run on days where every model produced a valid
    forecast; Q-Like adds the days where every forecast was far enough
    from singular.
    """
    models = panel.models
    notes: list[str] = []
    returns_dates = [str(d) for d in returns_dates]
    returns_pct = np.asarray(returns_pct, dtype=float)
    if returns_pct.ndim != 2 or returns_pct.shape[0] != len(returns_dates):
        raise DimensionError("returns must be (days, assets) aligned with dates")
    if returns_pct.shape[1] != len(panel.asset_ids):
        raise DimensionError("returns must cover every asset")
    lookup = {d: i for i, d in enumerate(returns_dates)}
    missing = [d for d in panel.dates if d not in lookup]
    if missing:
        raise AlignmentError(f"returns are missing date {missing[0]!r}")

    valid = np.ones(panel.n_days, dtype=bool)
    for m in models:
        valid &= ~panel.failed[m]
    common = np.flatnonzero(valid)
    if common.size == 0:
        raise InsufficientHistoryError("no day has forecasts from every model")
    common_dates = tuple(panel.dates[i] for i in common)
    ret = returns_pct[[lookup[d] for d in common_dates]]
    realized = panel.realized[common]

    k = len(models)
    tc = common.size
    frob = np.empty((tc, k))
    qlike = np.full((tc, k), np.nan)
    n_excluded = dict.fromkeys(models, 0)
    for j, m in enumerate(models):
        mats = panel.forecasts[m][common]
        for i in range(tc):
            frob[i, j] = frobenius_loss(realized[i], mats[i])
            try:
                qlike[i, j] = qlike_loss(realized[i], mats[i])
            except Exception:
                n_excluded[m] += 1

    loss_series = {
        m: LossSeries(
            model_id=m,
            dates=common_dates,
            frobenius=frob[:, j].copy(),
            qlike=qlike[:, j].copy(),
            n_excluded=n_excluded[m],
        )
        for j, m in enumerate(models)
    }

    qlike_ok = np.all(np.isfinite(qlike), axis=1)
    low, high = quarticity_split(common_dates, quart)
    sample_idx = {
        "full": np.arange(tc),
        "low_rq": low,
        "high_rq": high,
    }

    dm: dict[tuple[str, str], DmMatrix | None] = {}
    mcs_results: dict[tuple[str, str], McsResult | None] = {}
    for loss_name, matrix in (("frobenius", frob), ("qlike", qlike)):
        for sample in SAMPLES:
            idx = sample_idx[sample]
            if loss_name == "qlike":
                idx = idx[qlike_ok[idx]]
            sub = matrix[idx]
            key = (loss_name, sample)
            if k >= 2 and sub.shape[0] >= 30:
                stats = np.zeros((k, k))
                pvals = np.full((k, k), 0.5)
                for a in range(k):
                    for b in range(a + 1, k):
                        res = dm_test(sub[:, a], sub[:, b])
                        stats[a, b], pvals[a, b] = res.statistic, res.p_value
                        rev = dm_test(sub[:, b], sub[:, a])
                        stats[b, a], pvals[b, a] = rev.statistic, rev.p_value
                dm[key] = DmMatrix(models, stats, pvals)
            else:
                dm[key] = None
            if k >= 2 and sub.shape[0] >= 50:
                mcs_results[key] = mcs(
                    sub,
                    alpha=settings.mcs_alpha,
                    n_bootstrap=settings.n_bootstrap,
                    block_len=settings.block_len,
                    seed=settings.seed,
                    model_ids=models,
                )
            else:
                mcs_results[key] = None

    loss_rows = []
    for sample in SAMPLES:
        idx = sample_idx[sample]
        qidx = idx[qlike_ok[idx]]
        for j, m in enumerate(models):
            mf = mcs_results[("frobenius", sample)]
            mq = mcs_results[("qlike", sample)]
            loss_rows.append(
                LossRow(
                    model_id=m,
                    sample=sample,
                    n_days=int(idx.size),
                    frobenius_mean=float(frob[idx, j].mean()) if idx.size else float("nan"),
                    qlike_mean=float(qlike[qidx, j].mean()) if qidx.size else float("nan"),
                    in_mcs_frobenius=None if mf is None else m in mf.surviving_models,
                    in_mcs_qlike=None if mq is None else m in mq.surviving_models,
                )
            )

    econ_settings = settings.econ
    if econ_settings.base_model not in models:
        notes.append(
            f"base model {econ_settings.base_model!r} absent; using {models[0]!r}"
        )
        econ_settings = dataclasses.replace(econ_settings, base_model=models[0])
    econ_reports: dict[str, EconReport] = {}
    for long_only in settings.long_only_regimes:
        tracks = {
            m: track_portfolio(
                panel.forecasts[m][common], ret, common_dates, long_only=long_only
            )
            for m in models
        }
        regime = "long_only" if long_only else "unrestricted"
        econ_reports[regime] = econ_report(tracks, econ_settings, long_only)

    return EvalReport(
        model_ids=models,
        loss_rows=tuple(loss_rows),
        loss_series=loss_series,
        dm=dm,
        mcs_results=mcs_results,
        econ=econ_reports,
        n_common_days=tc,
        n_qlike_days=int(qlike_ok.sum()),
        base_model=econ_settings.base_model,
        notes=tuple(notes),
    )
