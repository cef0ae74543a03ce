"""HAR-family realized covariance forecasting and evaluation."""

__version__ = "0.1.0"

from .errors import HarcovError
from .measures import (
    CorrPanel,
    CovPanel,
    OutlierReport,
    QuartPanel,
    VolPanel,
    clean_outliers,
    compose_drd,
    decompose_drd,
    lag_aggregate,
    realized_cov,
    realized_quarticity,
    realized_variance,
    unvech,
    vech,
)
from .unihar import HarFit, HarSpec, build_design, fit_har, forecast_har
from .statespace import SsFit, SsParams, fit_ss, forecast_ss, kalman_loglik
from .mvmodels import (
    CorrFit,
    MvFit,
    fit_corr_har,
    fit_mhar,
    fit_mharq,
    forecast_corr,
    forecast_drd,
    forecast_mv,
)
from .statloss import (
    DmResult,
    LossSeries,
    McsResult,
    dm_test,
    frobenius_loss,
    mcs,
    qlike_loss,
    quarticity_split,
)
from .econ import (
    EconReport,
    EconSettings,
    PortfolioTrack,
    delta_gamma,
    gmv_weights,
    gmv_weights_longonly,
    sharpe,
    track_portfolio,
    turnover,
)
from .backtest import (
    BacktestConfig,
    DEFAULT_MODELS,
    EvalReport,
    EvalSettings,
    ForecastPanel,
    MODEL_IDS,
    evaluate,
    run_backtest,
)
from .synth import SynthConfig, SynthData, simulate

__all__ = [name for name in dir() if not name.startswith("_")]
