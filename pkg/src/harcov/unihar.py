"""Univariate HAR regressions on daily realized variance.

Four variants share one design builder and one OLS fitter:

* level target (lags 1, 5, 20 of realized variance),
* log target (same lags of log variance),
* either target with a quarticity interaction on the daily lag, which
  lets the first-lag loading shrink on days the variance was measured
  noisily.

Log-target forecasts are mapped back to levels with the usual
log-normal mean correction exp(mu + sigma^2 / 2) using the in-sample
residual variance. Level-target forecasts are floored at a small
positive value so downstream covariance composition stays valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    CollinearityError,
    DimensionError,
    DomainError,
    InsufficientHistoryError,
    ParameterError,
)
from .measures import lag_aggregate

LAGS = (1, 5, 20)
FORECAST_FLOOR = 1e-8


@dataclass(frozen=True)
class HarSpec:
    """Which HAR variant to estimate."""

    log_target: bool = False
    quarticity_term: bool = False

    @property
    def label(self) -> str:
        name = "HARQ" if self.quarticity_term else "HAR"
        return name + ("L" if self.log_target else "")

    @property
    def n_coef(self) -> int:
        return 5 if self.quarticity_term else 4


@dataclass(frozen=True)
class HarFit:
    """OLS estimates for one HAR variant.

    beta holds (intercept, lag1, lag5, lag20); gamma_q is the
    quarticity-interaction loading, None when the spec has no such
    term. std_errors aligns with (beta, gamma_q).
    """

    spec: HarSpec
    beta: np.ndarray
    gamma_q: float | None
    sigma_eps: float
    std_errors: np.ndarray
    n_obs: int


def _column_names(spec: HarSpec) -> list[str]:
    names = ["const", "lag1", "lag5", "lag20"]
    if spec.quarticity_term:
        names.append("rq_scaled")
    return names


def build_design(
    rv: np.ndarray, rq: np.ndarray | None, spec: HarSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix and target for a HAR regression.

    rv is the full variance history (T,); rows cover t = 20 .. T-1 so
    every lag aggregate is defined. rq must be supplied exactly when
    spec.quarticity_term is set. Columns are (const, lag1, lag5, lag20)
    plus, for the Q variants, sqrt(RQ_{t-1}) * RV_{t-1} on the level
    target or sqrt(RQ_{t-1}) / RV_{t-1} * log RV_{t-1} on the log target.
    """
    rv = np.asarray(rv, dtype=float)
    if rv.ndim != 1:
        raise DimensionError("rv must be one-dimensional")
    t = rv.shape[0]
    if t <= LAGS[-1]:
        raise InsufficientHistoryError(f"need more than {LAGS[-1]} days, got {t}")
    if spec.quarticity_term:
        if rq is None:
            raise ParameterError("spec has a quarticity term but rq is missing")
        rq = np.asarray(rq, dtype=float)
        if rq.shape != rv.shape:
            raise DimensionError("rq must align with rv")
        if np.any(rq < 0.0):
            raise DomainError("realized quarticity must be non-negative")
    elif rq is not None:
        raise ParameterError("rq supplied but spec has no quarticity term")

    if spec.log_target and np.any(rv <= 0.0):
        # the log transform (and, for HARQL, the 1/RV scaling) needs positive levels
        raise DomainError("realized variance must be strictly positive here")

    w = np.log(rv) if spec.log_target else rv
    cols = [np.ones(t - LAGS[-1])]
    for j in LAGS:
        cols.append(lag_aggregate(w, j)[LAGS[-1]:])
    if spec.quarticity_term:
        scale = np.sqrt(rq[:-1]) * rv[:-1] if not spec.log_target else (
            np.sqrt(rq[:-1]) / rv[:-1] * w[:-1]
        )
        cols.append(scale[LAGS[-1] - 1:])
    x = np.column_stack(cols)
    y = w[LAGS[-1]:]
    return x, y


def _check_rank(x: np.ndarray, names: list[str]) -> None:
    _, r, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diagonal(r))
    tol = max(x.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    dropped = diag <= tol
    if np.any(dropped):
        bad = ", ".join(names[piv[i]] for i in np.flatnonzero(dropped))
        raise CollinearityError(f"design matrix is rank deficient: {bad}")


def fit_har(rv: np.ndarray, rq: np.ndarray | None, spec: HarSpec) -> HarFit:
    """Estimate a HAR variant by OLS.

    Raises CollinearityError, naming the offending columns, when the
    design is rank deficient (a constant input series is the usual way
    to get there).
    """
    x, y = build_design(rv, rq, spec)
    names = _column_names(spec)
    _check_rank(x, names)
    coef, _, _, _ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    n, k = x.shape
    dof = n - k
    sigma_eps = float(np.sqrt(resid @ resid / dof)) if dof > 0 else 0.0
    xtx_inv = np.linalg.inv(x.T @ x)
    std_errors = sigma_eps * np.sqrt(np.diagonal(xtx_inv))
    gamma_q = float(coef[4]) if spec.quarticity_term else None
    return HarFit(
        spec=spec,
        beta=coef[:4].copy(),
        gamma_q=gamma_q,
        sigma_eps=sigma_eps,
        std_errors=std_errors,
        n_obs=n,
    )


def _forecast_mean(fit: HarFit, recent: np.ndarray, rq_last: float | None) -> float:
    recent = np.asarray(recent, dtype=float)
    if recent.ndim != 1 or recent.shape[0] < LAGS[-1]:
        raise InsufficientHistoryError(f"need the last {LAGS[-1]} variances")
    recent = recent[-LAGS[-1]:]
    spec = fit.spec
    if spec.quarticity_term:
        if rq_last is None:
            raise ParameterError("spec has a quarticity term but rq_last is missing")
        if rq_last < 0.0:
            raise DomainError("realized quarticity must be non-negative")
    elif rq_last is not None:
        raise ParameterError("rq_last supplied but spec has no quarticity term")
    if spec.log_target and np.any(recent <= 0.0):
        raise DomainError("realized variance must be strictly positive here")

    w = np.log(recent) if spec.log_target else recent
    mu = (
        fit.beta[0]
        + fit.beta[1] * w[-1]
        + fit.beta[2] * w[-LAGS[1]:].mean()
        + fit.beta[3] * w.mean()
    )
    if spec.quarticity_term:
        if spec.log_target:
            mu += fit.gamma_q * np.sqrt(rq_last) / recent[-1] * w[-1]
        else:
            mu += fit.gamma_q * np.sqrt(rq_last) * recent[-1]
    return float(mu)


def forecast_har(
    fit: HarFit,
    recent: np.ndarray,
    rq_last: float | None = None,
    floor: float = FORECAST_FLOOR,
) -> float:
    """One-step-ahead variance forecast in level units.

    recent holds the latest variances (at least 20, trailing order).
    Log-target fits apply exp(mu + sigma_eps^2 / 2); level-target fits
    clip at ``floor`` so the forecast stays usable as a variance.
    """
    mu = _forecast_mean(fit, recent, rq_last)
    if fit.spec.log_target:
        return float(np.exp(mu + 0.5 * fit.sigma_eps**2))
    return max(mu, floor)
