"""Economic evaluation: minimum-variance portfolios built on forecasts.

Weights come from the global minimum-variance rule w = H^-1 i / i'H^-1 i
(optionally with a long-only restriction solved by an active-set
method). Daily tracks record gross returns, turnover of the rebalance
into the next day, weight concentration and short mass; transaction
costs are charged per unit turnover. delta_gamma converts a pair of
return series into the daily fee an investor with quadratic utility
would pay to switch between them.

Units: portfolio returns enter and leave in percent; turnover and
delta_gamma work on decimal returns (delta_gamma's result is a daily
decimal fee; multiply by 252 * 1e4 for annualized basis points, which
annualized_delta_bp does).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateDriftError,
    DegenerateVarianceError,
    DimensionError,
    InfeasibleUtilityError,
    InsufficientHistoryError,
    UndefinedSharpeError,
)

TRADING_DAYS = 252
_RIDGE = 1e-8


def _solve_gmv(h: np.ndarray) -> tuple[np.ndarray, bool]:
    """H^-1 i normalized; returns (weights, ridge-regularized flag)."""
    n = h.shape[0]
    ones = np.ones(n)
    for attempt in range(2):
        try:
            cho = scipy.linalg.cho_factor(h, lower=True)
            x = scipy.linalg.cho_solve(cho, ones)
            if not np.all(np.isfinite(x)):
                raise np.linalg.LinAlgError("non-finite solve")
            return x / x.sum(), attempt > 0
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            if attempt > 0:
                raise DegenerateVarianceError(
                    "covariance forecast is singular even after regularization"
                )
            ridge = _RIDGE * max(float(np.trace(h)) / n, _RIDGE)
            h = h + ridge * np.eye(n)
    raise AssertionError("unreachable")


def _check_cov(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] < 1:
        raise DimensionError("covariance must be square")
    if not np.all(np.isfinite(h)):
        raise DimensionError("covariance must be finite")
    return 0.5 * (h + h.T)


def gmv_weights(h: np.ndarray) -> np.ndarray:
    """Global minimum-variance weights, summing to one, shorts allowed."""
    return _solve_gmv(_check_cov(h))[0]


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.max(np.flatnonzero(u * np.arange(1, v.size + 1) > css - 1.0))
    tau = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _longonly_fallback(h: np.ndarray) -> np.ndarray:
    n = h.shape[0]
    w = np.full(n, 1.0 / n)
    lam = float(np.linalg.eigvalsh(h)[-1])
    step = 1.0 / max(2.0 * lam, 1e-12)
    for _ in range(20000):
        nxt = _project_simplex(w - step * 2.0 * (h @ w))
        if np.abs(nxt - w).max() < 1e-14:
            w = nxt
            break
        w = nxt
    return w


def _solve_gmv_longonly(h: np.ndarray) -> tuple[np.ndarray, bool]:
    """Active-set long-only minimum variance; returns (weights, fallback flag)."""
    n = h.shape[0]
    free = list(range(n))
    w = np.zeros(n)
    for _ in range(10 * n):
        sub = h[np.ix_(free, free)]
        wf, _ = _solve_gmv(sub)
        if np.any(wf < 0.0):
            drop = free[int(np.argmin(wf))]
            free.remove(drop)
            if not free:
                break
            continue
        w = np.zeros(n)
        w[free] = wf
        grad = 2.0 * (h @ w)
        mu = grad[free[0]]
        clamped = [i for i in range(n) if i not in free]
        if not clamped:
            return w, False
        slack = np.array([grad[i] - mu for i in clamped])
        if np.all(slack >= -1e-10):
            return w, False
        free.append(clamped[int(np.argmin(slack))])
        free.sort()
    return _longonly_fallback(h), True


def gmv_weights_longonly(h: np.ndarray) -> np.ndarray:
    """Minimum-variance weights under w >= 0, sum w = 1."""
    w, _ = _solve_gmv_longonly(_check_cov(h))
    w = np.maximum(w, 0.0)
    return w / w.sum()


def turnover(w_next: np.ndarray, w_curr: np.ndarray, r_curr: np.ndarray) -> float:
    """Total rebalance distance from drifted current weights.

    r_curr is the day's decimal return vector; current weights drift
    with relative performance before the rebalance into w_next.
    """
    w_next = np.asarray(w_next, dtype=float)
    w_curr = np.asarray(w_curr, dtype=float)
    r_curr = np.asarray(r_curr, dtype=float)
    if not (w_next.shape == w_curr.shape == r_curr.shape) or w_next.ndim != 1:
        raise DimensionError("weights and returns must be aligned vectors")
    growth = 1.0 + float(w_curr @ r_curr)
    if abs(growth) < 1e-12:
        raise DegenerateDriftError("portfolio value change too close to -100%")
    drifted = w_curr * (1.0 + r_curr) / growth
    return float(np.abs(w_next - drifted).sum())


@dataclass(frozen=True, eq=False)
class PortfolioTrack:
    """Daily history of one model's minimum-variance portfolio.

    Returns are in percent. turnover[t] is the rebalance out of day t
    into day t+1; the final day has no transition and its entry is 0,
    excluded from mean_turnover. short_positions is the (non-positive)
    sum of negative weights; exactly 0 under the long-only rule.
    """

    dates: tuple[str, ...]
    weights: np.ndarray
    gross_returns: np.ndarray
    net_returns: np.ndarray
    turnover: np.ndarray
    concentration: np.ndarray
    short_positions: np.ndarray
    cost_rate: float
    long_only: bool
    n_regularized: int
    n_fallback: int

    def net_returns_at(self, cost_rate: float) -> np.ndarray:
        """Net percent returns at a different proportional cost."""
        return self.gross_returns - 100.0 * cost_rate * self.turnover

    @property
    def mean_turnover(self) -> float:
        if len(self.dates) < 2:
            return 0.0
        return float(self.turnover[:-1].mean())


def track_portfolio(
    forecasts: np.ndarray,
    returns_pct: np.ndarray,
    dates,
    long_only: bool = False,
    cost_rate: float = 0.0,
) -> PortfolioTrack:
    """Run the minimum-variance rule over a panel of forecasts.

    forecasts is (T, N, N), each matrix the covariance forecast for its
    day built from prior information only; returns_pct is (T, N) in
    percent. Net returns subtract cost_rate per unit turnover.
    """
    forecasts = np.asarray(forecasts, dtype=float)
    returns_pct = np.asarray(returns_pct, dtype=float)
    dates = tuple(str(d) for d in dates)
    t = len(dates)
    if forecasts.ndim != 3 or forecasts.shape[0] != t:
        raise DimensionError("forecasts must be (days, assets, assets)")
    n = forecasts.shape[1]
    if returns_pct.shape != (t, n):
        raise DimensionError("returns must be (days, assets)")
    if cost_rate < 0.0:
        raise DimensionError("cost rate must be non-negative")

    weights = np.empty((t, n))
    n_reg = 0
    n_fb = 0
    for i in range(t):
        h = _check_cov(forecasts[i])
        if long_only:
            w, fb = _solve_gmv_longonly(h)
            w = np.maximum(w, 0.0)
            w = w / w.sum()
            n_fb += int(fb)
        else:
            w, reg = _solve_gmv(h)
            n_reg += int(reg)
        weights[i] = w

    gross = np.einsum("ij,ij->i", weights, returns_pct)
    to = np.zeros(t)
    r_dec = returns_pct / 100.0
    for i in range(t - 1):
        to[i] = turnover(weights[i + 1], weights[i], r_dec[i])
    net = gross - 100.0 * cost_rate * to
    conc = np.sqrt(np.einsum("ij,ij->i", weights, weights))
    short = np.where(weights < 0.0, weights, 0.0).sum(axis=1)
    return PortfolioTrack(
        dates=dates,
        weights=weights,
        gross_returns=gross,
        net_returns=net,
        turnover=to,
        concentration=conc,
        short_positions=short,
        cost_rate=cost_rate,
        long_only=long_only,
        n_regularized=n_reg,
        n_fallback=n_fb,
    )


def sharpe(returns_pct: np.ndarray) -> float:
    """Annualized Sharpe ratio of a daily percent return series."""
    r = np.asarray(returns_pct, dtype=float)
    if r.ndim != 1 or r.shape[0] < 2:
        raise InsufficientHistoryError("need at least 2 returns")
    sd = float(r.std(ddof=1))
    if sd == 0.0:
        raise UndefinedSharpeError("return series has zero variance")
    return float(math.sqrt(TRADING_DAYS) * r.mean() / sd)


def _utility_sum(r_dec: np.ndarray, a: float) -> float:
    g = 1.0 + r_dec
    return float(g.sum() - a * (g * g).sum())


def delta_gamma(
    returns_base: np.ndarray, returns_other: np.ndarray, gamma: float
) -> float:
    """Daily fee equating quadratic utility of two decimal return series.

    Solves sum_t U(r_base) = sum_t U(r_other - delta) for delta with
    U(r) = (1+r) - gamma / (2 (1+gamma)) (1+r)^2. A positive value
    means the second series is worth paying for. Of the two quadratic
    roots the one of smaller magnitude is the economically relevant
    one (the other reflects past the utility peak).
    """
    rb = np.asarray(returns_base, dtype=float)
    ro = np.asarray(returns_other, dtype=float)
    if rb.shape != ro.shape or rb.ndim != 1 or rb.size == 0:
        raise DimensionError("return series must be aligned non-empty vectors")
    if gamma < 0.0:
        raise DimensionError("risk aversion must be non-negative")
    t = rb.size
    a = gamma / (2.0 * (1.0 + gamma))
    z = 1.0 + ro
    c = _utility_sum(ro, a) - _utility_sum(rb, a)
    b = 2.0 * a * float(z.sum()) - t
    big_a = -a * t
    if a == 0.0:
        return -c / b
    disc = b * b - 4.0 * big_a * c
    if disc < 0.0:
        raise InfeasibleUtilityError("no fee equates the two utility sums")
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = []
    if big_a != 0.0:
        roots.append(q / big_a)
    if q != 0.0:
        roots.append(c / q)
    if not roots:
        return 0.0
    return float(min(roots, key=abs))


def annualized_delta_bp(delta_daily: float) -> float:
    """Daily decimal fee expressed in annualized basis points."""
    return delta_daily * TRADING_DAYS * 1e4


# ---------------------------------------------------------------------------
# report assembly

@dataclass(frozen=True)
class EconSettings:
    """What the economic report computes."""

    cost_levels: tuple[float, ...] = (0.0, 0.01, 0.02)
    gammas: tuple[float, ...] = (1.0, 10.0)
    base_model: str = "HARQL-DRD"


@dataclass(frozen=True)
class CostCell:
    """Per-cost-level performance of one model."""

    ann_mean_pct: float
    ann_std_pct: float
    sharpe: float
    delta_daily: dict[float, float]
    delta_annual_bp: dict[float, float]


@dataclass(frozen=True)
class EconRow:
    model_id: str
    turnover_mean: float
    concentration_mean: float
    short_mean: float
    by_cost: dict[float, CostCell]


@dataclass(frozen=True)
class EconReport:
    """Economic comparison of models under one weight regime.

    delta entries compare each model against base_model: positive
    means an investor would pay to switch from the model to the base.
    """

    long_only: bool
    base_model: str
    rows: dict[str, EconRow]


def econ_report(
    tracks: dict[str, PortfolioTrack],
    settings: EconSettings,
    long_only: bool,
) -> EconReport:
    """Summarize portfolio tracks into the per-model economic table."""
    base = settings.base_model
    if base not in tracks:
        raise DimensionError(f"base model {base!r} has no track")
    rows: dict[str, EconRow] = {}
    for model, track in tracks.items():
        cells: dict[float, CostCell] = {}
        for c in settings.cost_levels:
            net = track.net_returns_at(c)
            base_net = tracks[base].net_returns_at(c)
            try:
                sr = sharpe(net)
            except (UndefinedSharpeError, InsufficientHistoryError):
                sr = float("nan")
            deltas: dict[float, float] = {}
            bps: dict[float, float] = {}
            for g in settings.gammas:
                try:
                    d = delta_gamma(net / 100.0, base_net / 100.0, g)
                except InfeasibleUtilityError:
                    d = float("nan")
                deltas[g] = d
                bps[g] = annualized_delta_bp(d)
            cells[c] = CostCell(
                ann_mean_pct=float(net.mean() * TRADING_DAYS),
                ann_std_pct=float(net.std(ddof=1) * math.sqrt(TRADING_DAYS))
                if net.size > 1
                else float("nan"),
                sharpe=sr,
                delta_daily=deltas,
                delta_annual_bp=bps,
            )
        rows[model] = EconRow(
            model_id=model,
            turnover_mean=track.mean_turnover,
            concentration_mean=float(track.concentration.mean()),
            short_mean=float(track.short_positions.mean()),
            by_cost=cells,
        )
    return EconReport(long_only=long_only, base_model=base, rows=rows)
