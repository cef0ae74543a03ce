"""Pooled vech models, correlation dynamics, and DRD composition."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import minimize

from harcov.errors import (
    CollinearityError,
    DegenerateVarianceError,
    DimensionError,
    DomainError,
    InsufficientHistoryError,
    ParameterError,
)
from harcov.measures import corr_unvech, lag_aggregate, unvech, vech
from harcov.mvmodels import (
    CorrFit,
    MvFit,
    ProjectionCounter,
    _project_simplex_box,
    fit_corr_har,
    fit_mhar,
    fit_mharq,
    forecast_corr,
    forecast_drd,
    forecast_mv,
)


def _vech_panel(t, k, seed, pi_effect=0.0):
    """Stationary positive panel with common-slope lag structure."""
    rng = np.random.default_rng(seed)
    s = np.empty((t, k))
    s[:20] = 0.5 + 0.1 * rng.random((20, k))
    pi = 0.1 * (1.0 + rng.random((t, k)))
    for i in range(20, t):
        mu = (
            0.08
            + 0.35 * s[i - 1]
            + 0.3 * s[i - 5 : i].mean(axis=0)
            + 0.2 * s[i - 20 : i].mean(axis=0)
            + pi_effect * pi[i - 1] * s[i - 1]
        )
        s[i] = np.maximum(mu + 0.03 * rng.standard_normal(k), 0.01)
    return s, pi


def _dummy_ols(s, pi=None):
    """Per-element-intercept OLS fitted with explicit dummy columns."""
    t, k = s.shape
    y = s[20:].ravel()
    n = t - 20
    blocks = [lag_aggregate(s, j)[20:] for j in (1, 5, 20)]
    if pi is not None:
        blocks.append((pi * s)[19:-1])
    dummies = np.tile(np.eye(k), (n, 1))
    x = np.column_stack([dummies] + [b.ravel() for b in blocks])
    coef, _, _, _ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    sigma2 = resid @ resid / (x.shape[0] - x.shape[1])
    ses = np.sqrt(sigma2 * np.diagonal(np.linalg.inv(x.T @ x)))
    return coef[:k], coef[k:], ses[k:]


class TestPooledFit:
    def test_matches_dummy_variable_ols(self):
        s, _ = _vech_panel(200, 6, seed=1)
        fit = fit_mhar(s)
        intercepts, slopes, ses = _dummy_ols(s)
        assert_allclose(fit.intercepts, intercepts, rtol=1e-8)
        assert_allclose(fit.slopes, slopes, rtol=1e-8)
        assert_allclose(fit.slope_std_errors, ses, rtol=1e-7)
        assert fit.alpha_1q is None
        assert not fit.pi_dropped
        assert fit.n_obs == 180
        assert fit.resid_scale.shape == (6,)
        assert np.all(fit.resid_scale > 0.0)

    def test_attenuation_matches_dummy_ols(self):
        s, pi = _vech_panel(300, 3, seed=2, pi_effect=-0.4)
        fit = fit_mharq(s, pi)
        intercepts, slopes, ses = _dummy_ols(s, pi)
        assert_allclose(fit.intercepts, intercepts, rtol=1e-8)
        assert_allclose(fit.slopes, slopes[:3], rtol=1e-8)
        assert_allclose(fit.alpha_1q, slopes[3], rtol=1e-8)
        assert_allclose(fit.slope_std_errors, ses, rtol=1e-7)

    def test_attenuation_sign_recovered(self):
        s, pi = _vech_panel(3000, 3, seed=3, pi_effect=-0.4)
        fit = fit_mharq(s, pi)
        assert fit.alpha_1q < 0.0
        assert abs(fit.alpha_1q + 0.4) < 4.0 * fit.slope_std_errors[3]

    def test_zero_pi_drops_column(self):
        s, _ = _vech_panel(150, 4, seed=4)
        fit = fit_mharq(s, np.zeros_like(s))
        plain = fit_mhar(s)
        assert fit.pi_dropped
        assert fit.alpha_1q is None
        assert np.array_equal(fit.slopes, plain.slopes)
        assert np.array_equal(fit.intercepts, plain.intercepts)

    def test_constant_pi_is_collinear(self):
        # a constant proxy makes the attenuation column proportional
        # to the daily lag
        s, _ = _vech_panel(150, 4, seed=5)
        with pytest.raises(CollinearityError):
            fit_mharq(s, np.full_like(s, 0.2))

    def test_pi_validation(self):
        s, pi = _vech_panel(100, 3, seed=6)
        with pytest.raises(ParameterError):
            fit_mharq(s, None)
        with pytest.raises(DimensionError):
            fit_mharq(s, pi[:, :2])
        with pytest.raises(DomainError):
            fit_mharq(s, -pi)

    def test_panel_validation(self):
        with pytest.raises(DimensionError):
            fit_mhar(np.ones(50))
        with pytest.raises(InsufficientHistoryError):
            fit_mhar(np.ones((20, 3)))
        s, _ = _vech_panel(100, 3, seed=7)
        s2 = s.copy()
        s2[10, 1] = np.nan
        with pytest.raises(DomainError):
            fit_mhar(s2)


class TestForecastMv:
    def test_matches_hand_computation(self):
        s, pi = _vech_panel(200, 6, seed=8, pi_effect=-0.2)
        # vech rows of 3x3 matrices; shrink off-diagonal elements so the
        # raw forecast is diagonally dominant and no repair runs
        s[:, [1, 2, 4]] *= 0.1
        fit = fit_mharq(s, pi)
        got = forecast_mv(fit, s, pi_last=pi[-1])
        last = s[-20:]
        v = (
            fit.intercepts
            + fit.slopes[0] * last[-1]
            + fit.slopes[1] * last[-5:].mean(axis=0)
            + fit.slopes[2] * last.mean(axis=0)
            + fit.alpha_1q * pi[-1] * last[-1]
        )
        assert_allclose(vech(0.5 * (got + got.T)), v, rtol=1e-10)

    def test_uses_only_last_twenty_rows(self):
        s, _ = _vech_panel(200, 3, seed=9)
        fit = fit_mhar(s)
        assert np.array_equal(forecast_mv(fit, s), forecast_mv(fit, s[-20:]))

    def test_projects_to_psd(self):
        # intercepts force a raw forecast with a negative eigenvalue
        bad = vech(np.array([[1.0, 2.0], [2.0, 1.0]]))
        fit = MvFit(
            intercepts=bad,
            slopes=np.zeros(3),
            alpha_1q=None,
            resid_scale=np.ones(3),
            slope_std_errors=np.zeros(3),
            pi_dropped=False,
            n_obs=100,
        )
        out = forecast_mv(fit, np.zeros((20, 3)))
        w = np.linalg.eigvalsh(out)
        assert w[0] >= -1e-12
        assert np.all(np.diagonal(out) >= 1e-8)

    def test_diagonal_floor(self):
        fit = MvFit(
            intercepts=np.zeros(3),
            slopes=np.zeros(3),
            alpha_1q=None,
            resid_scale=np.ones(3),
            slope_std_errors=np.zeros(3),
            pi_dropped=False,
            n_obs=100,
        )
        out = forecast_mv(fit, np.zeros((20, 3)), floor=1e-4)
        assert np.all(np.diagonal(out) == 1e-4)

    def test_input_checks(self):
        s, pi = _vech_panel(100, 3, seed=10, pi_effect=-0.2)
        fit = fit_mharq(s, pi)
        with pytest.raises(InsufficientHistoryError):
            forecast_mv(fit, s[-19:], pi_last=pi[-1])
        with pytest.raises(DimensionError):
            forecast_mv(fit, s[:, :2], pi_last=pi[-1])
        with pytest.raises(ParameterError):
            forecast_mv(fit, s)
        with pytest.raises(DimensionError):
            forecast_mv(fit, s, pi_last=pi[-1, :2])
        plain = fit_mhar(s)
        with pytest.raises(ParameterError):
            forecast_mv(plain, s, pi_last=pi[-1])


def _corr_panel(t, seed, weights=(0.3, 0.25, 0.2), noise=0.02):
    """Correlation vectors with the pooled lag structure, n = 3 assets."""
    rng = np.random.default_rng(seed)
    rbar = np.array([0.45, 0.3, 0.5])
    r = np.empty((t, 3))
    r[:20] = rbar + 0.05 * rng.standard_normal((20, 3))
    for i in range(20, t):
        dev = (
            weights[0] * (r[i - 1] - rbar)
            + weights[1] * (r[i - 5 : i].mean(axis=0) - rbar)
            + weights[2] * (r[i - 20 : i].mean(axis=0) - rbar)
        )
        r[i] = np.clip(rbar + dev + noise * rng.standard_normal(3), -0.9, 0.9)
    return r


def _corr_lstsq(corr):
    rbar = corr.mean(axis=0)
    y = (corr[20:] - rbar).ravel()
    x = np.column_stack(
        [(lag_aggregate(corr, j)[20:] - rbar).ravel() for j in (1, 5, 20)]
    )
    gam, _, _, _ = np.linalg.lstsq(x, y, rcond=None)
    return rbar, gam, x, y


class TestCorrFit:
    def test_valid_weights_equal_least_squares(self):
        corr = _corr_panel(800, seed=11)
        fit = fit_corr_har(corr)
        rbar, gam, _, _ = _corr_lstsq(corr)
        assert not fit.constrained
        assert_allclose(fit.rbar, rbar, rtol=1e-12)
        assert_allclose(fit.gammas, gam, rtol=1e-10)
        assert np.all(fit.gammas > 0.0)
        assert fit.gammas.sum() < 1.0

    def test_constrained_fit_matches_qp_oracle(self):
        # strong negative daily autocorrelation pushes OLS outside the
        # valid region
        corr = _corr_panel(400, seed=12, weights=(-0.6, 0.1, 0.1), noise=0.05)
        fit = fit_corr_har(corr)
        assert fit.constrained
        assert np.all(fit.gammas >= 0.0)
        assert fit.gammas.sum() <= 1.0 - 1e-6 + 1e-12

        _, _, x, y = _corr_lstsq(corr)

        def obj(g):
            e = y - x @ g
            return e @ e

        ref = minimize(
            obj,
            np.full(3, 0.2),
            method="SLSQP",
            bounds=[(0.0, None)] * 3,
            constraints=[
                {"type": "ineq", "fun": lambda g: 1.0 - 1e-6 - g.sum()}
            ],
            options={"ftol": 1e-14, "maxiter": 500},
        )
        assert obj(fit.gammas) <= ref.fun + 1e-9

    def test_flat_panel_collinear(self):
        with pytest.raises(CollinearityError):
            fit_corr_har(np.full((100, 3), 0.4))


class TestProjection:
    def test_matches_slsqp_on_random_problems(self):
        rng = np.random.default_rng(13)
        cap = 1.0 - 1e-6
        for _ in range(100):
            a = rng.standard_normal((3, 3))
            q = a @ a.T + 0.1 * np.eye(3)
            b = rng.standard_normal(3) * 2.0
            g = _project_simplex_box(q, b)
            assert np.all(g >= 0.0)
            assert g.sum() <= cap + 1e-12

            def obj(v):
                return 0.5 * v @ q @ v - b @ v

            ref = minimize(
                obj,
                np.full(3, 0.1),
                method="SLSQP",
                bounds=[(0.0, None)] * 3,
                constraints=[{"type": "ineq", "fun": lambda v: cap - v.sum()}],
                options={"ftol": 1e-14, "maxiter": 500},
            )
            assert obj(g) <= ref.fun + 1e-8


class TestForecastCorr:
    def test_convex_combination_by_hand(self):
        corr = _corr_panel(300, seed=14)
        fit = fit_corr_har(corr)
        counter = ProjectionCounter()
        out = forecast_corr(fit, corr, counter)
        g1, g5, g20 = fit.gammas
        want = (
            fit.rbar
            + g1 * (corr[-1] - fit.rbar)
            + g5 * (corr[-5:].mean(axis=0) - fit.rbar)
            + g20 * (corr[-20:].mean(axis=0) - fit.rbar)
        )
        assert_allclose(out, corr_unvech(want, 3), rtol=1e-12)
        assert np.array_equal(np.diagonal(out), np.ones(3))
        assert np.linalg.eigvalsh(out)[0] >= -1e-12
        assert counter.count == 0

    def test_no_projection_on_valid_panels(self):
        counter = ProjectionCounter()
        for seed in range(20):
            corr = _corr_panel(150, seed=100 + seed)
            fit = fit_corr_har(corr)
            if fit.constrained:
                continue
            forecast_corr(fit, corr, counter)
        assert counter.count == 0

    def test_projection_repairs_invalid_input(self):
        # rows that are not realizable correlations: the implied 3x3
        # matrix has a negative eigenvalue, so the combination needs the
        # repair path
        vec = np.array([0.9, -0.9, 0.9])
        fit = CorrFit(rbar=vec, gammas=np.array([0.5, 0.3, 0.1]),
                      constrained=False, n_obs=100)
        counter = ProjectionCounter()
        out = forecast_corr(fit, np.tile(vec, (20, 1)), counter)
        assert counter.count == 1
        assert np.array_equal(np.diagonal(out), np.ones(3))
        assert np.linalg.eigvalsh(out)[0] >= -1e-10
        assert np.abs(out - out.T).max() == 0.0

    def test_input_checks(self):
        corr = _corr_panel(100, seed=15)
        fit = fit_corr_har(corr)
        with pytest.raises(InsufficientHistoryError):
            forecast_corr(fit, corr[-19:])
        with pytest.raises(DimensionError):
            forecast_corr(fit, corr[:, :2])


class TestForecastDrd:
    def test_hand_example(self):
        out = forecast_drd(
            np.array([4.0, 9.0]), np.array([[1.0, 0.5], [0.5, 1.0]])
        )
        assert_allclose(out, [[4.0, 3.0], [3.0, 9.0]])
        assert np.array_equal(np.diagonal(out), [4.0, 9.0])

    def test_rejects_bad_variances(self):
        r = np.eye(2)
        with pytest.raises(DegenerateVarianceError):
            forecast_drd(np.array([1.0, 0.0]), r)
        with pytest.raises(DimensionError):
            forecast_drd(np.ones((2, 2)), r)

    def test_round_trip_with_unvech(self):
        s = unvech(np.array([2.0, 0.3, 1.0, 0.2, 0.1, 1.5]))
        from harcov.measures import decompose_drd

        d, r = decompose_drd(s)
        out = forecast_drd(np.diagonal(s), r)
        assert_allclose(out, s, rtol=1e-12)
