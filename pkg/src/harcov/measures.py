"""Realized-measure panels and the matrix operations shared by every model.

Conventions used throughout the package:

* Covariance units are squared daily percent returns; volatilities and
  realized variances live on the same percent scale.
* ``vech`` stacks the lower triangle of a symmetric matrix, diagonal
  included, in column-major order: (1,1), (2,1), ..., (N,1), (2,2), ...
* Correlation vectors stack the strict lower triangle in the same order.
* Positions that a lag aggregate cannot fill are explicit ``nan`` markers,
  never silently dropped rows.

Panels are immutable: arrays are copied on construction and marked
read-only, so a fitted model can safely hold references into them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AlignmentError,
    CompositionError,
    DegenerateVarianceError,
    DimensionError,
    EmptyDayError,
    InsufficientHistoryError,
    NotPsdError,
    SymmetryError,
)

SYMMETRY_RTOL = 1e-10
PSD_RTOL = 1e-8


# ---------------------------------------------------------------------------
# vech layout helpers

def vech_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) index arrays of the lower triangle in column-major order."""
    if n < 1:
        raise DimensionError("matrix order must be at least 1")
    r, c = np.triu_indices(n)
    return c, r


def corr_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) index arrays of the strict lower triangle, column-major."""
    if n < 2:
        raise DimensionError("correlation vector needs at least 2 assets")
    r, c = np.triu_indices(n, k=1)
    return c, r


def vech_order(length: int) -> int:
    """Matrix order n with n(n+1)/2 == length, or raise."""
    n = int((np.sqrt(8 * length + 1) - 1) / 2)
    if n * (n + 1) // 2 != length:
        raise DimensionError(f"{length} is not a triangular number")
    return n


def vech_labels(n: int) -> list[str]:
    """Column labels v_<i>_<j> (1-based, i >= j) matching vech order."""
    rows, cols = vech_indices(n)
    return [f"v_{i + 1}_{j + 1}" for i, j in zip(rows, cols)]


def _check_symmetric(s: np.ndarray, what: str = "matrix") -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"{what} must be square, got shape {s.shape}")
    scale = max(1.0, float(np.abs(s).max())) if s.size else 1.0
    if np.abs(s - s.T).max(initial=0.0) > SYMMETRY_RTOL * scale:
        raise SymmetryError(f"{what} is not symmetric within tolerance")
    return s


def vech(s: np.ndarray) -> np.ndarray:
    """Stack the lower triangle of a symmetric matrix, column-major."""
    s = _check_symmetric(s)
    rows, cols = vech_indices(s.shape[0])
    return s[rows, cols].copy()


def unvech(v: np.ndarray) -> np.ndarray:
    """Rebuild the symmetric matrix whose vech is ``v``."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError("vech input must be one-dimensional")
    n = vech_order(v.shape[0])
    rows, cols = vech_indices(n)
    s = np.empty((n, n))
    s[rows, cols] = v
    s[cols, rows] = v
    return s


def corr_vech(r: np.ndarray) -> np.ndarray:
    """Strict lower triangle of a correlation matrix, column-major."""
    r = _check_symmetric(r, "correlation matrix")
    rows, cols = corr_indices(r.shape[0])
    return r[rows, cols].copy()


def corr_unvech(v: np.ndarray, n: int) -> np.ndarray:
    """Rebuild a unit-diagonal matrix from its strict lower triangle."""
    v = np.asarray(v, dtype=float)
    rows, cols = corr_indices(n)
    if v.shape != rows.shape:
        raise DimensionError(f"need {rows.size} entries for order {n}")
    r = np.eye(n)
    r[rows, cols] = v
    r[cols, rows] = v
    return r


# ---------------------------------------------------------------------------
# DRD decomposition

def decompose_drd(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a covariance matrix into D @ R @ D with D = diag(vols).

    Returns (D, R). The diagonal of R is exactly 1. Raises
    DegenerateVarianceError if any diagonal entry of ``s`` is not
    strictly positive.
    """
    s = _check_symmetric(s, "covariance matrix")
    d = np.diagonal(s)
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        raise DegenerateVarianceError("diagonal must be strictly positive")
    vol = np.sqrt(d)
    r = s / np.outer(vol, vol)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return np.diag(vol), r


def compose_drd(d: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Compose D @ R @ D, validating that R is a correlation matrix.

    R must be symmetric, have a unit diagonal, and be PSD within the
    package eigenvalue tolerance; D must be diagonal with strictly
    positive diagonal. The result has diagonal exactly D_ii**2.
    """
    d = np.asarray(d, dtype=float)
    r = _check_symmetric(r, "correlation matrix")
    if d.shape != r.shape:
        raise DimensionError("D and R must have the same shape")
    dv = np.diagonal(d)
    if np.any(d != np.diag(dv)):
        raise DimensionError("D must be diagonal")
    if np.any(dv <= 0.0):
        raise DegenerateVarianceError("D diagonal must be strictly positive")
    if np.abs(np.diagonal(r) - 1.0).max() > 1e-8:
        raise CompositionError("R must have a unit diagonal")
    eig = np.linalg.eigvalsh(r)
    if eig[0] < -PSD_RTOL * max(1.0, eig[-1]):
        raise CompositionError("R is not positive semi-definite")
    s = (dv[:, None] * r) * dv[None, :]
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, dv * dv)
    return s


def nearest_psd(s: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone (eigenvalue clipping)."""
    s = np.asarray(s, dtype=float)
    b = 0.5 * (s + s.T)
    w, v = np.linalg.eigh(b)
    out = (v * np.maximum(w, 0.0)) @ v.T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# intraday aggregation

def realized_variance(returns: np.ndarray) -> float:
    """Sum of squared intraday returns for one asset-day."""
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1:
        raise DimensionError("intraday returns must be one-dimensional")
    if r.size == 0:
        raise EmptyDayError("no intraday observations")
    return float(np.dot(r, r))


def realized_quarticity(returns: np.ndarray) -> float:
    """(M/3) times the sum of fourth-power intraday returns."""
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1:
        raise DimensionError("intraday returns must be one-dimensional")
    m = r.size
    if m == 0:
        raise EmptyDayError("no intraday observations")
    r2 = r * r
    return float(m / 3.0 * np.dot(r2, r2))


def realized_cov(returns: np.ndarray) -> np.ndarray:
    """Outer-product realized covariance of one day's intraday returns.

    ``returns`` is (M, N): M intraday intervals, N assets. The diagonal
    equals realized_variance applied to each column exactly.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim != 2:
        raise DimensionError("intraday returns must be (intervals, assets)")
    if r.shape[0] == 0:
        raise EmptyDayError("no intraday observations")
    c = r.T @ r
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, [realized_variance(r[:, i]) for i in range(r.shape[1])])
    return c


def lag_aggregate(series: np.ndarray, j: int) -> np.ndarray:
    """Trailing j-day mean, aligned so position t averages t-j .. t-1.

    Works on (T,) or (T, K) arrays; the first j positions are nan.
    """
    if j < 1:
        raise DimensionError("aggregation horizon must be at least 1")
    arr = np.asarray(series, dtype=float)
    t = arr.shape[0]
    if t <= j:
        raise InsufficientHistoryError(f"need more than {j} observations, got {t}")
    out = np.full(arr.shape, np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(arr, j, axis=0)
    out[j:] = windows[: t - j].mean(axis=-1)
    return out


# ---------------------------------------------------------------------------
# panels

def _check_dates(dates) -> tuple[str, ...]:
    dates = tuple(str(d) for d in dates)
    if len(dates) == 0:
        raise DimensionError("panel must contain at least one day")
    for a, b in zip(dates, dates[1:]):
        if not a < b:
            raise AlignmentError(f"dates must be strictly increasing: {a!r} >= {b!r}")
    return dates


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CovPanel:
    """Daily realized covariance matrices.

    mats is (T, N, N); every matrix must be symmetric within 1e-10
    relative tolerance and PSD within the eigenvalue tolerance
    (smallest eigenvalue >= -1e-8 times the largest).
    """

    dates: tuple[str, ...]
    mats: np.ndarray
    asset_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "dates", _check_dates(self.dates))
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        mats = np.array(self.mats, dtype=float)
        n = len(self.asset_ids)
        if mats.ndim != 3 or mats.shape != (len(self.dates), n, n):
            raise DimensionError(
                f"mats must be ({len(self.dates)}, {n}, {n}), got {mats.shape}"
            )
        scale = max(1.0, float(np.abs(mats).max()))
        gap = np.abs(mats - mats.transpose(0, 2, 1)).max(initial=0.0)
        if gap > SYMMETRY_RTOL * scale:
            raise SymmetryError("covariance matrices must be symmetric")
        eig = np.linalg.eigvalsh(mats)
        bad = eig[:, 0] < -PSD_RTOL * np.maximum(1.0, eig[:, -1])
        if np.any(bad):
            day = int(np.flatnonzero(bad)[0])
            raise NotPsdError(f"matrix for {self.dates[day]} is not PSD")
        object.__setattr__(self, "mats", _freeze(mats))

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)

    def vech_values(self) -> np.ndarray:
        """(T, N(N+1)/2) array of vech rows."""
        rows, cols = vech_indices(self.n_assets)
        return self.mats[:, rows, cols].copy()

    def vol_values(self) -> np.ndarray:
        """(T, N) array of diagonal variances."""
        return np.diagonal(self.mats, axis1=1, axis2=2).copy()

    def corr_values(self) -> np.ndarray:
        """(T, N(N-1)/2) array of strict-lower correlation rows.

        Raises DegenerateVarianceError if any diagonal entry is zero.
        """
        out = np.empty((self.n_days, self.n_assets * (self.n_assets - 1) // 2))
        rows, cols = corr_indices(self.n_assets)
        for t in range(self.n_days):
            _, r = decompose_drd(self.mats[t])
            out[t] = r[rows, cols]
        return out

    def vol_panel(self) -> "VolPanel":
        return VolPanel(self.dates, self.vol_values(), self.asset_ids)


@dataclass(frozen=True, eq=False)
class VolPanel:
    """Daily realized variances per asset, (T, N), non-negative."""

    dates: tuple[str, ...]
    values: np.ndarray
    asset_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "dates", _check_dates(self.dates))
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape != (len(self.dates), len(self.asset_ids)):
            raise DimensionError(
                f"values must be ({len(self.dates)}, {len(self.asset_ids)})"
            )
        if np.any(values < 0.0) or not np.all(np.isfinite(values)):
            raise DegenerateVarianceError("variances must be finite and >= 0")
        object.__setattr__(self, "values", _freeze(values))

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)


class QuartPanel(VolPanel):
    """Daily realized quarticities per asset, same layout as VolPanel."""


@dataclass(frozen=True, eq=False)
class CorrPanel:
    """Daily correlation vectors, strict lower triangle, column-major."""

    dates: tuple[str, ...]
    values: np.ndarray
    n_assets: int

    def __post_init__(self):
        object.__setattr__(self, "dates", _check_dates(self.dates))
        values = np.array(self.values, dtype=float)
        p = self.n_assets * (self.n_assets - 1) // 2
        if values.ndim != 2 or values.shape != (len(self.dates), p):
            raise DimensionError(f"values must be ({len(self.dates)}, {p})")
        if np.any(np.abs(values) > 1.0 + 1e-12):
            raise DimensionError("correlations must lie in [-1, 1]")
        object.__setattr__(self, "values", _freeze(values))

    @property
    def n_days(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class OutlierReport:
    """What clean_outliers flagged and replaced.

    flagged_dates holds day indices, including day 0 if it flags;
    n_replaced counts only days actually overwritten, so it equals
    len(flagged_dates) except when day 0 is flagged (no predecessor
    to copy from, reported but left as is). elements[k] names the
    first offending entry of flagged day k: a vech label v_i_j for a
    covariance element, a ticker for a quarticity column.
    """

    flagged_dates: tuple[int, ...]
    rule: float
    n_replaced: int
    elements: tuple[str, ...]


def clean_outliers(
    cov: CovPanel, quart: QuartPanel, threshold: float = 20.0
) -> tuple[CovPanel, QuartPanel, OutlierReport]:
    """Replace extreme days with the previous day's measurements.

    A day flags when any covariance element or any quarticity deviates
    from its full-sample mean by more than ``threshold`` full-sample
    standard deviations. Statistics are computed once on the input
    (single pass), so replaced days do not change the flag set. A
    flagged day is overwritten wholesale, covariance matrix and
    quarticity row together, with the previous day's values.
    """
    if cov.dates != quart.dates:
        raise AlignmentError("covariance and quarticity panels must share dates")
    if cov.asset_ids != quart.asset_ids:
        raise AlignmentError("covariance and quarticity panels must share assets")
    threshold = float(threshold)
    if not threshold > 0.0:
        raise DimensionError("threshold must be positive")

    x = np.hstack([cov.vech_values(), np.asarray(quart.values)])
    names = vech_labels(cov.n_assets) + list(cov.asset_ids)
    t = cov.n_days
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1) if t > 1 else np.zeros(x.shape[1])
    with np.errstate(invalid="ignore"):
        exceed = np.abs(x - mean) > threshold * sd
    flagged = [int(i) for i in np.flatnonzero(exceed.any(axis=1))]
    elements = tuple(names[int(np.argmax(exceed[i]))] for i in flagged)

    mats = np.array(cov.mats)
    qvals = np.array(quart.values)
    n_replaced = 0
    for day in flagged:
        if day == 0:
            continue
        mats[day] = mats[day - 1]
        qvals[day] = qvals[day - 1]
        n_replaced += 1

    report = OutlierReport(tuple(flagged), threshold, n_replaced, elements)
    cleaned_cov = CovPanel(cov.dates, mats, cov.asset_ids)
    cleaned_quart = QuartPanel(quart.dates, qvals, quart.asset_ids)
    return cleaned_cov, cleaned_quart, report
