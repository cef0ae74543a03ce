"""Statistical evaluation: matrix losses, forecast comparison tests.

Losses are computed day by day against the realized matrix. Two losses
are used everywhere: the Frobenius distance and the Q-Like loss
log det(H) + tr(H^-1 S), whose expectation is minimized by the true
conditional covariance, so it is robust to noise in the realized proxy.

dm_test compares two aligned loss series with a HAC-studentized mean
difference (Bartlett kernel, lag floor(T^(1/3))) against a standard
normal. mcs runs the model-confidence-set elimination with the range
statistic and a paired moving-block bootstrap: every model keeps the
same resampled days, replications use counter-based substreams so the
result does not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg
from scipy.special import ndtr

from ._rng import substream
from .errors import (
    AlignmentError,
    ConfigError,
    DimensionError,
    InsufficientHistoryError,
    SingularForecastError,
)
from .measures import QuartPanel

QLIKE_EIG_FLOOR = 1e-10


def frobenius_loss(realized: np.ndarray, forecast: np.ndarray) -> float:
    """Frobenius norm of the forecast error matrix."""
    s = np.asarray(realized, dtype=float)
    h = np.asarray(forecast, dtype=float)
    if s.shape != h.shape or s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError("realized and forecast must be square and aligned")
    diff = s - h
    return float(np.sqrt(np.sum(diff * diff)))


def qlike_loss(realized: np.ndarray, forecast: np.ndarray) -> float:
    """log det(H) + tr(H^-1 S); requires H comfortably invertible."""
    s = np.asarray(realized, dtype=float)
    h = np.asarray(forecast, dtype=float)
    if s.shape != h.shape or s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError("realized and forecast must be square and aligned")
    eig = np.linalg.eigvalsh(0.5 * (h + h.T))
    if eig[0] <= QLIKE_EIG_FLOOR:
        raise SingularForecastError(
            f"forecast eigenvalue {eig[0]:.3e} too small for Q-Like"
        )
    logdet = float(np.sum(np.log(eig)))
    cho = scipy.linalg.cho_factor(0.5 * (h + h.T), lower=True)
    trace = float(np.trace(scipy.linalg.cho_solve(cho, s)))
    return logdet + trace


@dataclass(frozen=True, eq=False)
class LossSeries:
    """Daily losses of one model.

    qlike entries are nan on days the forecast was too close to
    singular; n_excluded counts them.
    """

    model_id: str
    dates: tuple[str, ...]
    frobenius: np.ndarray
    qlike: np.ndarray
    n_excluded: int


def quarticity_split(
    dates: Sequence[str], quart: QuartPanel
) -> tuple[np.ndarray, np.ndarray]:
    """Split days into calm and noisy halves by standardized quarticity.

    Each asset's quarticity is centered at its median and scaled by its
    interquartile range (degenerate IQR falls back to 1); the per-day
    score is the cross-asset mean. Days are ranked with a stable sort,
    so ties keep date order; the low half gets floor(T/2) days. Returns
    positions into ``dates``.
    """
    dates = [str(d) for d in dates]
    lookup = {d: i for i, d in enumerate(quart.dates)}
    missing = [d for d in dates if d not in lookup]
    if missing:
        raise AlignmentError(f"dates missing from quarticity panel: {missing[0]!r}")
    vals = np.asarray(quart.values)[[lookup[d] for d in dates]]
    med = np.median(vals, axis=0)
    q75, q25 = np.percentile(vals, [75, 25], axis=0)
    iqr = q75 - q25
    iqr[iqr == 0.0] = 1.0
    score = ((vals - med) / iqr).mean(axis=1)
    order = np.argsort(score, kind="stable")
    cut = len(dates) // 2
    return np.sort(order[:cut]), np.sort(order[cut:])


class DmResult(NamedTuple):
    statistic: float
    p_value: float


def _norm_cdf(stat: float) -> float:
    # split by sign so that negating the statistic complements the
    # p-value to within one ulp
    if stat <= 0.0:
        return float(ndtr(stat))
    return float(1.0 - ndtr(-stat))


def dm_test(loss_a: np.ndarray, loss_b: np.ndarray) -> DmResult:
    """Equal-predictive-accuracy test on two aligned loss series.

    The statistic is the mean of d = loss_a - loss_b studentized by its
    Bartlett HAC variance with lag floor(T^(1/3)); the p-value is the
    lower normal tail, so small values favor the first model. Identical
    series return (0, 0.5) by convention.
    """
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("loss series must be aligned one-dimensional arrays")
    t = a.shape[0]
    if t < 30:
        raise InsufficientHistoryError(f"need at least 30 losses, got {t}")
    d = a - b
    if np.all(d == 0.0):
        return DmResult(0.0, 0.5)
    lag = int(t ** (1.0 / 3.0))
    dc = d - d.mean()
    hac = float(dc @ dc) / t
    for j in range(1, lag + 1):
        weight = 1.0 - j / (lag + 1.0)
        hac += 2.0 * weight * float(dc[j:] @ dc[:-j]) / t
    hac = max(hac, 1e-12)
    stat = float(d.mean() / math.sqrt(hac / t))
    return DmResult(stat, _norm_cdf(stat))


@dataclass(frozen=True)
class McsResult:
    """Model confidence set at level alpha.

    p_values maps model id to its elimination p-value (running maximum
    along the elimination path, final survivor 1.0); the set keeps
    every model with p-value above alpha.
    """

    surviving_models: frozenset[str]
    p_values: dict[str, float]
    eliminated_order: tuple[str, ...]
    alpha: float
    n_bootstrap: int
    block_len: int


def _block_bootstrap_means(
    losses: np.ndarray, n_bootstrap: int, block_len: int, seed: int
) -> np.ndarray:
    t = losses.shape[0]
    n_blocks = -(-t // block_len)
    offsets = np.arange(block_len)
    out = np.empty((n_bootstrap, losses.shape[1]))
    for b in range(n_bootstrap):
        rng = substream(seed, "mcs", b)
        starts = rng.integers(0, t - block_len + 1, size=n_blocks)
        idx = (starts[:, None] + offsets).ravel()[:t]
        out[b] = losses[idx].mean(axis=0)
    return out


def mcs(
    losses: np.ndarray,
    alpha: float = 0.10,
    n_bootstrap: int = 1000,
    block_len: int | None = None,
    seed: int = 0,
    model_ids: Sequence[str] | None = None,
) -> McsResult:
    """Model confidence set via iterated range-statistic elimination.

    losses is (days, models). Each elimination round studentizes all
    pairwise mean loss differences with recentered bootstrap variances,
    compares the largest absolute t-statistic against its bootstrap
    distribution, and drops the model with the worst studentized
    deficit. The elimination runs to the last model so every model
    receives a p-value.
    """
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 2 or losses.shape[1] < 2:
        raise DimensionError("losses must be (days, models) with at least 2 models")
    t, k = losses.shape
    if t < 50:
        raise InsufficientHistoryError(f"need at least 50 days, got {t}")
    if n_bootstrap < 100:
        raise ConfigError("need at least 100 bootstrap replications")
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie strictly between 0 and 1")
    if model_ids is None:
        model_ids = [f"model_{i}" for i in range(k)]
    model_ids = [str(m) for m in model_ids]
    if len(model_ids) != k or len(set(model_ids)) != k:
        raise DimensionError("model_ids must be unique, one per column")
    if block_len is None:
        block_len = max(1, int(t ** (1.0 / 3.0)))
    if not 1 <= block_len <= t:
        raise ConfigError("block length must lie in [1, days]")

    boot = _block_bootstrap_means(losses, n_bootstrap, block_len, seed)
    col_means = losses.mean(axis=0)

    active = list(range(k))
    steps: list[tuple[int, float]] = []
    while len(active) > 1:
        act = np.array(active)
        d = col_means[act][:, None] - col_means[act][None, :]
        bd = boot[:, act][:, :, None] - boot[:, act][:, None, :]
        var = np.mean((bd - d) ** 2, axis=0)
        se = np.sqrt(np.maximum(var, 1e-16))
        tstat = d / se
        t_range = float(np.abs(tstat).max())
        t_boot = (np.abs(bd - d) / se).reshape(n_bootstrap, -1).max(axis=1)
        p_step = float(np.mean(t_boot >= t_range))
        worst = int(np.argmax(tstat.max(axis=1)))
        steps.append((active[worst], p_step))
        del active[worst]
    steps.append((active[0], 1.0))

    p_values: dict[str, float] = {}
    running = 0.0
    for idx, p in steps:
        running = max(running, p)
        p_values[model_ids[idx]] = running
    surviving = frozenset(m for m, p in p_values.items() if p > alpha)
    return McsResult(
        surviving_models=surviving,
        p_values=p_values,
        eliminated_order=tuple(model_ids[idx] for idx, _ in steps[:-1]),
        alpha=alpha,
        n_bootstrap=n_bootstrap,
        block_len=block_len,
    )
