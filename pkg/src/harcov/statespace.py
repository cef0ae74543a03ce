"""HAR with a latent AR(1) shift on the daily-lag loading.

The observation equation is

    y_t = x_t' beta + f_t * lambda_t + eps_t,      eps_t ~ N(0, sigma_eps^2)
    lambda_t = phi * lambda_{t-1} + eta_t,         eta_t ~ N(0, sigma_eta^2)

where y is (log) realized variance, x_t = (1, lag1, lag5, lag20) and
f_t equals the daily lag, so beta_1 + lambda_t is a time-varying
persistence coefficient. lambda_0 starts from its stationary law
N(0, sigma_eta^2 / (1 - phi^2)).

The scalar Kalman recursion is compiled with numba; maximum likelihood
runs Nelder-Mead on the transformed vector (beta, atanh(phi),
log sigma_eps, log sigma_eta), so the parameter constraints hold by
construction. A pure-regression candidate (phi = 0, sigma_eta = 0 at
the OLS solution) is always evaluated alongside the optimizer output
and the best likelihood wins, so the fit never scores below the model
it nests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .errors import (
    CollinearityError,
    DimensionError,
    DomainError,
    InitializationError,
    InsufficientHistoryError,
    ParameterError,
)
from .unihar import FORECAST_FLOOR, HarSpec, LAGS, build_design, fit_har

_LOG2PI = math.log(2.0 * math.pi)


@njit(cache=True, nogil=True)
def _filter(y, xb, f, phi, se2, sn2, a_out, p_out):  # pragma: no cover
    """Scalar Kalman filter; fills filtered state/variance, returns loglik."""
    a = 0.0
    p = sn2 / (1.0 - phi * phi) if sn2 > 0.0 else 0.0
    ll = 0.0
    for t in range(y.shape[0]):
        ft = f[t]
        big_f = ft * ft * p + se2
        v = y[t] - ft * a - xb[t]
        ll += -0.5 * (_LOG2PI + math.log(big_f) + v * v / big_f)
        k = p * ft / big_f
        a_filt = a + k * v
        p_filt = (1.0 - k * ft) * p
        a_out[t] = a_filt
        p_out[t] = p_filt
        a = phi * a_filt
        p = phi * phi * p_filt + sn2
    return ll


@dataclass(frozen=True)
class SsParams:
    """Parameters of the shifted-persistence model.

    |phi| < 1 always (the optimizer guarantees it through atanh);
    sigma_eps > 0; sigma_eta >= 0, with 0 collapsing the model to the
    plain regression.
    """

    beta: np.ndarray
    phi: float
    sigma_eps: float
    sigma_eta: float

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.shape != (4,):
            raise DimensionError("beta must have 4 entries")
        object.__setattr__(self, "beta", beta.copy())
        if not abs(self.phi) < 1.0:
            raise ParameterError("|phi| must be below 1")
        if not self.sigma_eps > 0.0:
            raise ParameterError("sigma_eps must be strictly positive")
        if self.sigma_eta < 0.0:
            raise ParameterError("sigma_eta must be non-negative")


@dataclass(frozen=True)
class SsFit:
    """Maximum-likelihood fit plus the filtered state path."""

    params: SsParams
    loglik: float
    filtered_state: np.ndarray
    filtered_var: np.ndarray
    log_target: bool
    converged: bool
    n_iter: int
    n_obs: int


def _validate_series(y, x, f):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    if y.ndim != 1 or f.shape != y.shape:
        raise DimensionError("y and f must be aligned one-dimensional arrays")
    if x.shape != (y.shape[0], 4):
        raise DimensionError("x must be (n, 4)")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x)) and np.all(np.isfinite(f))):
        raise DomainError("state-space inputs must be finite")
    return y, x, f


def filter_series(
    params: SsParams, y: np.ndarray, x: np.ndarray, f: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Run the filter; returns (loglik, filtered state, filtered variance)."""
    y, x, f = _validate_series(y, x, f)
    xb = x @ params.beta
    a = np.empty(y.shape[0])
    p = np.empty(y.shape[0])
    ll = _filter(
        y, xb, f, params.phi, params.sigma_eps**2, params.sigma_eta**2, a, p
    )
    return float(ll), a, p


def kalman_loglik(
    params: SsParams, y: np.ndarray, x: np.ndarray, f: np.ndarray
) -> float:
    """Exact Gaussian log-likelihood of the shifted-persistence model."""
    return filter_series(params, y, x, f)[0]


def _design(rv: np.ndarray, log_target: bool):
    x, y = build_design(rv, None, HarSpec(log_target=log_target))
    return y, x, x[:, 1].copy()


def _neg_loglik_factory(y, x, f):
    n = y.shape[0]
    a = np.empty(n)
    p = np.empty(n)

    def neg(theta):
        # the simplex roams all of R^7; corners where tanh rounds to
        # exactly +-1, exp overflows, or the observation variance
        # underflows to zero are outside the model, not filter errors
        if abs(theta[4]) >= 18.0 or theta[5] > 700.0 or theta[6] > 700.0:
            return math.inf
        beta = theta[:4]
        phi = math.tanh(theta[4])
        se = math.exp(theta[5])
        sn = math.exp(theta[6])
        se2 = se * se
        if se2 == 0.0:
            return math.inf
        ll = _filter(y, x @ beta, f, phi, se2, sn * sn, a, p)
        return -ll if math.isfinite(ll) else math.inf

    return neg


def fit_ss(rv: np.ndarray, log_target: bool = False, max_iter: int = 2000) -> SsFit:
    """Fit the shifted-persistence model by maximum likelihood.

    Nelder-Mead on the transformed parameters, started at the OLS
    solution with (phi, sigma_eta) = (0.9, 0.1 sigma_eps); one restart
    from (0.0, 0.5 sigma_eps) if the first run stalls. Convergence
    means the simplex function-value spread fell below 1e-8 within
    ``max_iter`` iterations.
    """
    try:
        ols = fit_har(rv, None, HarSpec(log_target=log_target))
    except CollinearityError as exc:
        raise InitializationError(f"OLS start values unavailable: {exc}") from exc
    y, x, f = _design(rv, log_target)
    n = y.shape[0]
    resid_ss = ols.sigma_eps**2 * (n - 4)
    sigma_ml = math.sqrt(max(resid_ss / n, 1e-300))

    neg = _neg_loglik_factory(y, x, f)

    def run(phi0: float, sn_scale: float):
        theta0 = np.concatenate(
            [
                ols.beta,
                [math.atanh(phi0), math.log(ols.sigma_eps), math.log(sn_scale * ols.sigma_eps)],
            ]
        )
        if not math.isfinite(neg(theta0)):
            raise InitializationError("log-likelihood undefined at start values")
        res = minimize(
            neg,
            theta0,
            method="Nelder-Mead",
            options={
                "fatol": 1e-8,
                "xatol": math.inf,
                "maxiter": max_iter,
                "maxfev": 50 * max_iter,
            },
        )
        return res

    res = run(0.9, 0.1)
    runs = [res]
    if not res.success:
        runs.append(run(0.0, 0.5))
    best = min(runs, key=lambda r: r.fun)

    def unpack(theta) -> SsParams:
        return SsParams(
            beta=theta[:4],
            phi=math.tanh(theta[4]),
            sigma_eps=math.exp(theta[5]),
            sigma_eta=math.exp(theta[6]),
        )

    params = unpack(best.x)
    loglik = -float(best.fun)

    # the nested pure-regression optimum; keeps the fit from ever scoring
    # below the model it contains
    corner = SsParams(beta=ols.beta, phi=0.0, sigma_eps=sigma_ml, sigma_eta=0.0)
    corner_ll = kalman_loglik(corner, y, x, f)
    if corner_ll > loglik:
        params, loglik = corner, corner_ll

    ll, a, p = filter_series(params, y, x, f)
    return SsFit(
        params=params,
        loglik=float(ll),
        filtered_state=a,
        filtered_var=p,
        log_target=log_target,
        converged=bool(best.success),
        n_iter=int(sum(r.nit for r in runs)),
        n_obs=n,
    )


def _forecast_from_state(
    params: SsParams,
    log_target: bool,
    recent_w: np.ndarray,
    lam: float,
    lam_var: float,
    floor: float,
) -> float:
    x_next = np.array(
        [1.0, recent_w[-1], recent_w[-LAGS[1]:].mean(), recent_w.mean()]
    )
    f_next = recent_w[-1]
    mu = float(x_next @ params.beta + f_next * params.phi * lam)
    if not log_target:
        return max(mu, floor)
    pred_var = (
        f_next * f_next * (params.phi**2 * lam_var + params.sigma_eta**2)
        + params.sigma_eps**2
    )
    return float(np.exp(mu + 0.5 * pred_var))


def _recent_w(recent: np.ndarray, log_target: bool) -> np.ndarray:
    recent = np.asarray(recent, dtype=float)
    if recent.ndim != 1 or recent.shape[0] < LAGS[-1]:
        raise InsufficientHistoryError(f"need the last {LAGS[-1]} variances")
    recent = recent[-LAGS[-1]:]
    if log_target:
        if np.any(recent <= 0.0):
            raise DomainError("realized variance must be strictly positive here")
        return np.log(recent)
    return recent


def forecast_ss(fit: SsFit, recent: np.ndarray, floor: float = FORECAST_FLOOR) -> float:
    """One-step-ahead variance forecast from the end of the fit window.

    Log-target fits exponentiate with half the full predictive variance
    f^2 (phi^2 P + sigma_eta^2) + sigma_eps^2, which collapses to the
    plain log-normal correction when phi = sigma_eta = 0.
    """
    w = _recent_w(recent, fit.log_target)
    return _forecast_from_state(
        fit.params,
        fit.log_target,
        w,
        float(fit.filtered_state[-1]),
        float(fit.filtered_var[-1]),
        floor,
    )


def refilter_forecast(
    params: SsParams,
    rv_trailing: np.ndarray,
    log_target: bool,
    floor: float = FORECAST_FLOOR,
) -> float:
    """Forecast after re-running the filter over a trailing window.

    Used between refits: parameters stay frozen while the latent state
    is filtered over the latest data. When the trailing window equals
    the fit window this reproduces forecast_ss exactly.
    """
    rv_trailing = np.asarray(rv_trailing, dtype=float)
    if rv_trailing.shape[0] <= LAGS[-1]:
        raise InsufficientHistoryError(
            f"need more than {LAGS[-1]} trailing observations"
        )
    y, x, f = _design(rv_trailing, log_target)
    _, a, p = filter_series(params, y, x, f)
    w = _recent_w(rv_trailing, log_target)
    return _forecast_from_state(params, log_target, w, float(a[-1]), float(p[-1]), floor)
