"""Multivariate forecasters: pooled vech HAR models and the DRD route.

Two ways to a covariance forecast live here.

The pooled route stacks the vech of the covariance matrix and fits one
intercept per element with common HAR slopes across elements; the Q
variant adds an attenuation column built from a supplied noise proxy
pi (one non-negative scale per element, typically a quarticity
cross-product). Forecast matrices are projected onto the PSD cone when
rounding or estimation pushes an eigenvalue negative.

The DRD route forecasts the correlation part: a pooled HAR on the
deviation of each correlation from its full-sample mean. When the
estimated weights are positive and sum below one, the forecast is a
convex combination of past correlation matrices and the full-sample
mean, which keeps it PSD with unit diagonal by construction; weights
outside that region are projected onto it (least squares under the
constraints) and the fit is marked as constrained. forecast_drd then
glues any variance forecasts onto the correlation forecast.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import (
    CollinearityError,
    DimensionError,
    DomainError,
    InsufficientHistoryError,
    ParameterError,
)
from .measures import (
    PSD_RTOL,
    compose_drd,
    corr_unvech,
    lag_aggregate,
    nearest_psd,
    unvech,
)
from .unihar import FORECAST_FLOOR, LAGS

_SUM_CAP = 1.0 - 1e-6


@dataclass(frozen=True)
class MvFit:
    """Pooled vech-HAR estimates.

    intercepts is one alpha_0 per vech element; slopes holds the
    common (alpha_1, alpha_2, alpha_3); alpha_1q is the attenuation
    loading, None when absent or when the proxy column was identically
    zero (then pi_dropped is set and the slopes coincide with the plain
    pooled fit). resid_scale is the per-element residual standard
    deviation; slope_std_errors aligns with (slopes, alpha_1q).
    """

    intercepts: np.ndarray
    slopes: np.ndarray
    alpha_1q: float | None
    resid_scale: np.ndarray
    slope_std_errors: np.ndarray
    pi_dropped: bool
    n_obs: int


@dataclass(frozen=True)
class CorrFit:
    """Pooled correlation-HAR estimates around the full-sample mean."""

    rbar: np.ndarray
    gammas: np.ndarray
    constrained: bool
    n_obs: int


@dataclass
class ProjectionCounter:
    """Counts correlation forecasts that needed a PSD projection."""

    count: int = 0


def _lag_blocks(s: np.ndarray) -> tuple[np.ndarray, ...]:
    cut = LAGS[-1]
    return tuple(lag_aggregate(s, j)[cut:] for j in LAGS)


def _check_panel(s: np.ndarray, what: str) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2:
        raise DimensionError(f"{what} must be (days, elements)")
    if s.shape[0] <= LAGS[-1]:
        raise InsufficientHistoryError(
            f"need more than {LAGS[-1]} days, got {s.shape[0]}"
        )
    if not np.all(np.isfinite(s)):
        raise DomainError(f"{what} must be finite")
    return s


def _pooled_fit(y_dm: np.ndarray, regressors: list[np.ndarray], names: list[str]):
    """Common-slope OLS across elements; returns (slopes, ses, resid)."""
    n, k = y_dm.shape
    x = np.column_stack([r.ravel() for r in regressors])
    yv = y_dm.ravel()
    q, r = np.linalg.qr(x)
    diag = np.abs(np.diagonal(r))
    tol = max(x.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if np.any(diag <= tol):
        bad = ", ".join(names[i] for i in np.flatnonzero(diag <= tol))
        raise CollinearityError(f"pooled design is rank deficient: {bad}")
    coef, _, _, _ = np.linalg.lstsq(x, yv, rcond=None)
    resid_v = yv - x @ coef
    dof = x.shape[0] - len(regressors) - k  # k element means absorbed
    dof = max(dof, 1)
    sigma2 = float(resid_v @ resid_v) / dof
    xtx_inv = np.linalg.inv(x.T @ x)
    ses = np.sqrt(sigma2 * np.diagonal(xtx_inv))
    return coef, ses, resid_v.reshape(n, k)


def _fit_vech(s: np.ndarray, pi: np.ndarray | None) -> MvFit:
    s = _check_panel(s, "vech panel")
    cut = LAGS[-1]
    y = s[cut:]
    x1, x5, x20 = _lag_blocks(s)
    blocks = [x1, x5, x20]
    names = ["lag1", "lag5", "lag20"]
    pi_dropped = False
    xq = None
    if pi is not None:
        pi = np.asarray(pi, dtype=float)
        if pi.shape != s.shape:
            raise DimensionError("pi panel must align with the vech panel")
        if np.any(pi < 0.0):
            raise DomainError("pi must be non-negative")
        prod = pi * s
        xq = prod[cut - 1 : -1]
        if np.all(xq == 0.0):
            # proxy carries no signal; fall back to the plain pooled model
            xq = None
            pi_dropped = True
        else:
            blocks.append(xq)
            names.append("pi_lag1")

    means = [b.mean(axis=0) for b in ([y] + blocks)]
    y_dm = y - means[0]
    dm_blocks = [b - m for b, m in zip(blocks, means[1:])]
    coef, ses, resid = _pooled_fit(y_dm, dm_blocks, names)

    intercepts = means[0].copy()
    for c, m in zip(coef, means[1:]):
        intercepts -= c * m
    alpha_1q = float(coef[3]) if xq is not None else None
    resid_scale = resid.std(axis=0, ddof=1)
    return MvFit(
        intercepts=intercepts,
        slopes=coef[:3].copy(),
        alpha_1q=alpha_1q,
        resid_scale=resid_scale,
        slope_std_errors=ses,
        pi_dropped=pi_dropped,
        n_obs=y.shape[0],
    )


def fit_mhar(s: np.ndarray) -> MvFit:
    """Pooled HAR on vech rows: per-element intercepts, common slopes."""
    return _fit_vech(s, None)


def fit_mharq(s: np.ndarray, pi: np.ndarray) -> MvFit:
    """Pooled HAR plus an attenuation column pi * s on the daily lag.

    pi must be non-negative and aligned with s. A proxy that is
    identically zero contributes nothing; the column is dropped, the
    plain pooled model is fitted and pi_dropped records the fact.
    """
    if pi is None:
        raise ParameterError("fit_mharq needs a pi panel")
    return _fit_vech(s, pi)


def forecast_mv(
    fit: MvFit,
    recent: np.ndarray,
    pi_last: np.ndarray | None = None,
    floor: float = FORECAST_FLOOR,
) -> np.ndarray:
    """One-step-ahead covariance forecast from the latest vech rows.

    recent holds at least the last 20 vech rows. pi_last must be given
    exactly when the fit carries an attenuation loading. The raw vech
    forecast is reshaped to a matrix, projected to PSD if an eigenvalue
    went negative beyond tolerance, and its diagonal floored.
    """
    recent = np.asarray(recent, dtype=float)
    if recent.ndim != 2 or recent.shape[0] < LAGS[-1]:
        raise InsufficientHistoryError(f"need the last {LAGS[-1]} vech rows")
    if recent.shape[1] != fit.intercepts.shape[0]:
        raise DimensionError("element count differs from the fitted panel")
    recent = recent[-LAGS[-1]:]
    if fit.alpha_1q is not None and pi_last is None:
        raise ParameterError("fit has an attenuation term but pi_last is missing")
    if fit.alpha_1q is None and pi_last is not None:
        raise ParameterError("pi_last supplied but fit has no attenuation term")

    v = (
        fit.intercepts
        + fit.slopes[0] * recent[-1]
        + fit.slopes[1] * recent[-LAGS[1]:].mean(axis=0)
        + fit.slopes[2] * recent.mean(axis=0)
    )
    if fit.alpha_1q is not None:
        pi_last = np.asarray(pi_last, dtype=float)
        if pi_last.shape != recent[-1].shape:
            raise DimensionError("pi_last must have one entry per vech element")
        v = v + fit.alpha_1q * pi_last * recent[-1]

    s = unvech(v)
    eig = np.linalg.eigvalsh(s)
    if eig[0] < -PSD_RTOL * max(1.0, eig[-1]):
        s = nearest_psd(s)
    np.fill_diagonal(s, np.maximum(np.diagonal(s), floor))
    return s


# ---------------------------------------------------------------------------
# correlation dynamics

def _project_simplex_box(q: np.ndarray, b: np.ndarray) -> np.ndarray:
    """argmin 0.5 g'Qg - b'g subject to g >= 0, sum(g) <= cap.

    Exact active-set enumeration over the 3-variable problem: every
    subset of {g_i = 0} crossed with {sum constraint tight or slack}.
    """
    k = q.shape[0]
    best = np.zeros(k)
    best_obj = 0.0  # objective at g = 0
    for m in range(k + 1):
        for free in combinations(range(k), m):
            free = list(free)
            for tight in (False, True):
                if not free:
                    continue
                qf = q[np.ix_(free, free)]
                bf = b[free]
                try:
                    if tight:
                        kkt = np.zeros((m + 1, m + 1))
                        kkt[:m, :m] = qf
                        kkt[:m, m] = 1.0
                        kkt[m, :m] = 1.0
                        rhs = np.concatenate([bf, [_SUM_CAP]])
                        sol = np.linalg.solve(kkt, rhs)[:m]
                    else:
                        sol = np.linalg.solve(qf, bf)
                except np.linalg.LinAlgError:
                    continue
                if np.any(sol < -1e-12):
                    continue
                g = np.zeros(k)
                g[free] = np.maximum(sol, 0.0)
                if g.sum() > _SUM_CAP + 1e-12:
                    continue
                obj = 0.5 * g @ q @ g - b @ g
                if obj < best_obj - 1e-15:
                    best, best_obj = g, obj
    return best


def fit_corr_har(corr: np.ndarray) -> CorrFit:
    """Pooled HAR on correlations around their full-sample mean.

    When the least-squares weights leave the region {gamma > 0,
    sum(gamma) < 1} they are replaced by the constrained least-squares
    solution on {gamma >= 0, sum(gamma) <= 1 - 1e-6}, which restores
    the convex-combination guarantee for forecasts.
    """
    corr = _check_panel(corr, "correlation panel")
    cut = LAGS[-1]
    rbar = corr.mean(axis=0)
    y = corr[cut:] - rbar
    blocks = [b - rbar for b in _lag_blocks(corr)]
    x = np.column_stack([b.ravel() for b in blocks])
    yv = y.ravel()
    qq, rr = np.linalg.qr(x)
    diag = np.abs(np.diagonal(rr))
    tol = max(x.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if np.any(diag <= tol):
        names = ["lag1", "lag5", "lag20"]
        bad = ", ".join(names[i] for i in np.flatnonzero(diag <= tol))
        raise CollinearityError(f"correlation design is rank deficient: {bad}")
    gam, _, _, _ = np.linalg.lstsq(x, yv, rcond=None)
    constrained = False
    if not (np.all(gam > 0.0) and gam.sum() < 1.0):
        gam = _project_simplex_box(x.T @ x, x.T @ yv)
        constrained = True
    return CorrFit(
        rbar=rbar.copy(), gammas=gam.copy(), constrained=constrained, n_obs=y.shape[0]
    )


def forecast_corr(
    fit: CorrFit,
    recent: np.ndarray,
    counter: ProjectionCounter | None = None,
) -> np.ndarray:
    """One-step-ahead correlation matrix from the latest vectors.

    With valid weights the result is a convex combination of
    correlation matrices, hence PSD with unit diagonal; a projection
    plus diagonal renormalization runs only if that guarantee is
    somehow violated, and ``counter`` records such events.
    """
    recent = np.asarray(recent, dtype=float)
    if recent.ndim != 2 or recent.shape[0] < LAGS[-1]:
        raise InsufficientHistoryError(f"need the last {LAGS[-1]} correlation rows")
    if recent.shape[1] != fit.rbar.shape[0]:
        raise DimensionError("element count differs from the fitted panel")
    recent = recent[-LAGS[-1]:]
    g1, g5, g20 = fit.gammas
    r = (
        fit.rbar
        + g1 * (recent[-1] - fit.rbar)
        + g5 * (recent[-LAGS[1]:].mean(axis=0) - fit.rbar)
        + g20 * (recent.mean(axis=0) - fit.rbar)
    )
    p = r.shape[0]
    n = int(round((1.0 + np.sqrt(1.0 + 8.0 * p)) / 2.0))
    mat = corr_unvech(r, n)
    eig = np.linalg.eigvalsh(mat)
    if eig[0] < -PSD_RTOL * max(1.0, eig[-1]):
        if counter is not None:
            counter.count += 1
        mat = nearest_psd(mat)
        d = np.sqrt(np.maximum(np.diagonal(mat), 1e-12))
        mat = mat / np.outer(d, d)
        mat = 0.5 * (mat + mat.T)
        np.fill_diagonal(mat, 1.0)
    return mat


def forecast_drd(var_forecasts: np.ndarray, corr_forecast: np.ndarray) -> np.ndarray:
    """Compose variance forecasts with a correlation forecast.

    var_forecasts holds one strictly positive variance per asset; the
    result is D @ R @ D with D = diag(sqrt(var)).
    """
    v = np.asarray(var_forecasts, dtype=float)
    if v.ndim != 1:
        raise DimensionError("var_forecasts must be one-dimensional")
    return compose_drd(np.diag(np.sqrt(v)), corr_forecast)
