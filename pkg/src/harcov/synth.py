"""Synthetic intraday market generator with known true covariances.

The data-generating process mirrors the stylized facts the forecasting
models target:

* each asset's log variance follows a stationary HAR recursion, so
  volatility is persistent at daily, weekly and monthly horizons;
* the correlation matrix moves slowly as a convex combination of its
  previous value, a fixed target and a fresh random correlation (hence
  always PSD); its long-run level is the target scaled by
  kappa / (kappa + corr_noise);
* intraday returns are Gaussian with the day's true covariance, scaled
  interval by interval with unit-mean lognormal multipliers whose
  dispersion is redrawn every day: realized measures stay unbiased, but
  days with spiky intraday volatility have both a noisier realized
  covariance and an elevated quarticity relative to the squared
  variance. That within-day channel is what the attenuation (Q) models
  are built to exploit, and its strength is the ``coupling`` knob. A
  day-level multiplier would not do: it scales the realized variance
  and the square root of quarticity identically, so the noise it adds
  cannot be told apart from a genuinely volatile day.

Everything is drawn from one counter-based stream, so a config maps to
one dataset, byte for byte, regardless of platform or parallelism.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass

import numpy as np

from ._rng import substream
from .errors import ConfigError
from .measures import CovPanel, QuartPanel, realized_cov, realized_quarticity

_LAGS = (1, 5, 20)


def default_corr_target(n_assets: int, rho: float = 0.6) -> np.ndarray:
    """Toeplitz correlation target rho^|i-j| (always PD for |rho|<1)."""
    idx = np.arange(n_assets)
    return rho ** np.abs(idx[:, None] - idx[None, :])


@dataclass(frozen=True, eq=False)
class SynthConfig:
    """Knobs of the generator; defaults give a realistic mid-size market.

    har_coeffs drives the log-variance recursion (const, daily, weekly,
    monthly); the three slope coefficients must sum below one. kappa
    pulls correlations toward corr_target, corr_noise mixes in a fresh
    random correlation each day; their sum must stay at most one. Note
    the mixing shrinks the stationary correlation level to
    kappa / (kappa + corr_noise) times the target. coupling >= 0 sets
    how strongly the within-day volatility dispersion varies across
    days (0 switches measurement quality variation off).
    """

    n_assets: int = 5
    n_days: int = 1500
    intraday_count: int = 78
    har_coeffs: tuple[float, float, float, float] = (0.05, 0.35, 0.30, 0.25)
    sigma_v: float = 0.4
    kappa: float = 0.03
    corr_noise: float = 0.02
    coupling: float = 0.75
    corr_target: np.ndarray | None = None
    burn_in: int = 100
    start_date: str = "2001-01-01"
    seed: int = 0

    def __post_init__(self):
        if self.n_assets < 2:
            raise ConfigError("need at least 2 assets")
        if self.n_days < 1:
            raise ConfigError("need at least 1 day")
        if self.intraday_count < 2:
            raise ConfigError("need at least 2 intraday intervals")
        b = self.har_coeffs
        if len(b) != 4:
            raise ConfigError("har_coeffs must be (const, daily, weekly, monthly)")
        if not (b[1] + b[2] + b[3] < 1.0):
            raise ConfigError("log-variance recursion must be stationary")
        if self.sigma_v < 0.0 or self.coupling < 0.0:
            raise ConfigError("volatility scales must be non-negative")
        if self.kappa < 0.0 or self.corr_noise < 0.0:
            raise ConfigError("correlation mixing weights must be non-negative")
        if self.kappa + self.corr_noise > 1.0:
            raise ConfigError("kappa + corr_noise must not exceed 1")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative")
        if self.corr_target is not None:
            tgt = np.asarray(self.corr_target, dtype=float)
            if tgt.shape != (self.n_assets, self.n_assets):
                raise ConfigError("corr_target has the wrong shape")
            if np.abs(tgt - tgt.T).max() > 1e-12 or np.abs(np.diagonal(tgt) - 1).max() > 1e-12:
                raise ConfigError("corr_target must be symmetric with unit diagonal")
            if np.linalg.eigvalsh(tgt)[0] <= 0.0:
                raise ConfigError("corr_target must be positive definite")
            object.__setattr__(self, "corr_target", tgt.copy())
        datetime.date.fromisoformat(self.start_date)


@dataclass(frozen=True, eq=False)
class SynthData:
    """One simulated market: realized panels plus the generating truth."""

    cov: CovPanel
    quart: QuartPanel
    returns_pct: np.ndarray
    true_cov: np.ndarray
    dates: tuple[str, ...]
    asset_ids: tuple[str, ...]
    config: SynthConfig


def _random_correlation(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n + 2))
    s = a @ a.T
    d = np.sqrt(np.diagonal(s))
    r = s / np.outer(d, d)
    np.fill_diagonal(r, 1.0)
    return r


def simulate(config: SynthConfig) -> SynthData:
    """Generate one dataset from the configured process."""
    rng = substream(config.seed, "synth")
    n = config.n_assets
    m = config.intraday_count
    total = config.burn_in + config.n_days
    b0, b1, b5, b20 = config.har_coeffs
    target = (
        config.corr_target
        if config.corr_target is not None
        else default_corr_target(n)
    )

    # stationary mean of the log-variance recursion seeds the lag buffer
    mu = b0 / (1.0 - b1 - b5 - b20)
    lag_buf = np.full((_LAGS[-1], n), mu)

    dates = []
    day0 = datetime.date.fromisoformat(config.start_date)
    mats = np.empty((config.n_days, n, n))
    quart = np.empty((config.n_days, n))
    rets = np.empty((config.n_days, n))
    true_cov = np.empty((config.n_days, n, n))

    corr = target.copy()
    keep = 1.0 - config.kappa - config.corr_noise
    out_t = 0
    for t in range(total):
        shock = config.sigma_v * rng.standard_normal(n)
        logv = (
            b0
            + b1 * lag_buf[-1]
            + b5 * lag_buf[-_LAGS[1]:].mean(axis=0)
            + b20 * lag_buf.mean(axis=0)
            + shock
        )
        lag_buf = np.vstack([lag_buf[1:], logv])

        noise_corr = _random_correlation(rng, n)
        corr = keep * corr + config.kappa * target + config.corr_noise * noise_corr
        corr = 0.5 * (corr + corr.T)
        np.fill_diagonal(corr, 1.0)

        vol = np.exp(0.5 * logv)
        sigma = (vol[:, None] * corr) * vol[None, :]
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(sigma)
            sigma = (v * np.maximum(w, 1e-12)) @ v.T
            sigma = 0.5 * (sigma + sigma.T)
            chol = np.linalg.cholesky(sigma)

        # all noise variables are drawn whether or not they end up used,
        # so one seed yields paired datasets across coupling settings
        g = config.coupling * abs(float(rng.standard_normal()))
        u = np.exp(g * rng.standard_normal(m) - 0.5 * g * g)
        z = rng.standard_normal((m, n))
        intraday = (z @ chol.T) * np.sqrt(u / m)[:, None]

        if t >= config.burn_in:
            mats[out_t] = realized_cov(intraday)
            quart[out_t] = [realized_quarticity(intraday[:, i]) for i in range(n)]
            rets[out_t] = intraday.sum(axis=0)
            true_cov[out_t] = sigma
            dates.append((day0 + datetime.timedelta(days=out_t)).isoformat())
            out_t += 1

    asset_ids = tuple(f"A{i + 1}" for i in range(n))
    cov_panel = CovPanel(tuple(dates), mats, asset_ids)
    quart_panel = QuartPanel(tuple(dates), quart, asset_ids)
    return SynthData(
        cov=cov_panel,
        quart=quart_panel,
        returns_pct=rets,
        true_cov=true_cov,
        dates=tuple(dates),
        asset_ids=asset_ids,
        config=config,
    )
