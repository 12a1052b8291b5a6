"""Bisquare loss identities, M-scale oracles, and MM-fit behavior."""
from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.integrate
import scipy.optimize
import scipy.stats as st

from ivrobust.exceptions import (
    DegenerateInstrumentError,
    InsufficientInstrumentsError,
)
from ivrobust.robust_mm import (
    BisquareParams,
    _normal_consistency,
    m_scale,
    mm_regress,
    psi_bisquare,
    rho_bisquare,
    weight_bisquare,
)
from ivrobust.wls import egger, ivw

from _helpers import make_set


def line_set(x, y, se_y=0.05):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return make_set(x, np.full(x.size, 0.01), y, np.full(x.size, se_y), harmonized=True)


class TestBisquareLoss:
    def test_anchor_values(self):
        c = 1.548
        assert rho_bisquare(0.0, c) == 0.0
        assert rho_bisquare(c, c) == pytest.approx(c * c / 6.0, rel=1e-15)
        assert rho_bisquare(5 * c, c) == pytest.approx(c * c / 6.0, rel=1e-15)

    def test_taylor_expansion_near_zero(self):
        # rho(r) = r^2/2 - r^4/(2 c^2) + r^6/(6 c^4) exactly (finite series)
        for c in (1.548, 4.685):
            for r in (0.01, -0.02, 0.005):
                expected = r**2 / 2 - r**4 / (2 * c**2) + r**6 / (6 * c**4)
                assert rho_bisquare(r, c) == pytest.approx(expected, rel=1e-12)

    def test_even_bounded_monotone(self):
        c = 1.548
        r = np.linspace(0, 3 * c, 500)
        vals = rho_bisquare(r, c)
        assert np.all(np.diff(vals) >= -1e-15)
        assert np.all(vals <= c * c / 6.0 + 1e-15)
        np.testing.assert_allclose(rho_bisquare(-r, c), vals, rtol=1e-15)

    def test_psi_is_rho_derivative(self):
        rng = np.random.default_rng(113)
        c = 4.685
        h = 1e-6
        checked = 0
        for r in rng.uniform(-2 * c, 2 * c, size=200):
            if abs(abs(r) - c) < 1e-3:
                continue
            checked += 1
            fd = (rho_bisquare(r + h, c) - rho_bisquare(r - h, c)) / (2 * h)
            assert psi_bisquare(float(r), c) == pytest.approx(fd, abs=1e-6)
        assert checked > 100

    def test_psi_weight_identity(self):
        rng = np.random.default_rng(127)
        c = 4.685
        r = rng.uniform(-2 * c, 2 * c, size=100)
        np.testing.assert_allclose(
            psi_bisquare(r, c), r * weight_bisquare(r, c), rtol=1e-14, atol=1e-300
        )

    def test_psi_redescends(self):
        c = 4.685
        assert psi_bisquare(c, c) == 0.0
        assert psi_bisquare(10 * c, c) == 0.0
        assert psi_bisquare(-7.0, c) == -psi_bisquare(7.0, c)

    def test_tuning_validated(self):
        with pytest.raises(ValueError):
            rho_bisquare(1.0, 0.0)
        with pytest.raises(ValueError):
            BisquareParams(c_s=-1.0)
        with pytest.raises(ValueError):
            BisquareParams(breakdown=1.0)


class TestMScale:
    def test_symmetric_two_point_closed_form(self):
        # residuals all of magnitude k: mean normalized loss is rho~(k/s) and
        # the root satisfies (k / (c s))^2 = 1 - (1/2)^(1/3)
        c = 1.548
        k = 1.0
        expected = k / (c * math.sqrt(1.0 - 0.5 ** (1.0 / 3.0)))
        got, exact = m_scale(np.array([1.0, -1.0, 1.0, -1.0, 1.0]), c=c)
        assert not exact
        assert got == pytest.approx(expected, rel=1e-9)
        got2, _ = m_scale(np.full(8, -2.5), c=c)
        assert got2 == pytest.approx(2.5 * expected, rel=1e-9)

    def test_matches_brentq_oracle(self):
        rng = np.random.default_rng(131)
        c = 1.548
        for _ in range(50):
            r = rng.normal(0, rng.uniform(0.5, 3), size=int(rng.integers(5, 40)))

            def f(s):
                u2 = np.minimum((r / (c * s)) ** 2, 1.0)
                return float(np.mean(1.0 - (1.0 - u2) ** 3)) - 0.5

            amax = float(np.abs(r).max())
            oracle = scipy.optimize.brentq(f, 1e-10 * amax, 10 * amax, xtol=1e-14)
            got, exact = m_scale(r, c=c)
            assert not exact
            assert got == pytest.approx(oracle, rel=1e-8)

    def test_scale_equivariant(self):
        rng = np.random.default_rng(137)
        r = rng.normal(size=30)
        base, _ = m_scale(r)
        scaled, _ = m_scale(7.5 * r)
        assert scaled == pytest.approx(7.5 * base, rel=1e-9)

    def test_exact_fit_detection(self):
        s, exact = m_scale(np.zeros(10))
        assert (s, exact) == (0.0, True)
        # 6 zeros of 10: strictly more than half at zero
        s, exact = m_scale(np.array([0.0] * 6 + [1.0] * 4))
        assert (s, exact) == (0.0, True)
        # exactly half at zero: root exists at min_nonzero / c
        s, exact = m_scale(np.array([0.0, 0.0, 2.0, 2.0]), c=1.548)
        assert not exact
        assert s == pytest.approx(2.0 / 1.548, rel=1e-9)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            m_scale(np.array([1.0, np.inf]))
        with pytest.raises(ValueError):
            m_scale(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            m_scale(np.array([1.0]), breakdown=0.0)


class TestNormalConsistency:
    def test_against_quadrature_oracle(self):
        def expectation(kappa, c):
            def integrand(z):
                u2 = min((z / (kappa * c)) ** 2, 1.0)
                return 2.0 * st.norm.pdf(z) * (1.0 - (1.0 - u2) ** 3)

            body, _ = scipy.integrate.quad(integrand, 0.0, kappa * c)
            return body + 2.0 * st.norm.sf(kappa * c)

        for c in (1.548, 2.0):
            oracle = scipy.optimize.brentq(
                lambda k: expectation(k, c) - 0.5, 0.3, 3.0, xtol=1e-12
            )
            assert _normal_consistency(c, 0.5) == pytest.approx(oracle, abs=1e-6)

    def test_near_one_at_default_tuning(self):
        # 1.548 is (a rounding of) the constant that makes the 50% breakdown
        # scale consistent for the normal sigma
        assert _normal_consistency(1.548, 0.5) == pytest.approx(1.0, abs=2e-3)

    def test_recovers_normal_sigma(self):
        rng = np.random.default_rng(139)
        r = rng.normal(0.0, 2.5, size=20000)
        s, _ = m_scale(r)
        assert s / _normal_consistency(1.548, 0.5) == pytest.approx(2.5, rel=0.03)


class TestMmRegress:
    def test_exact_line_no_intercept(self):
        x = np.linspace(0.05, 0.3, 25)
        s = line_set(x, 0.1 * x)
        fit, est = mm_regress(s, seed=1)
        assert fit.exact_fit
        assert fit.scale == 0.0
        assert fit.converged
        assert fit.slope == pytest.approx(0.1, abs=1e-12)
        assert not est.se_reported
        assert "exact fit" in est.warnings
        assert est.theta == fit.slope

    def test_exact_line_with_intercept(self):
        x = np.linspace(0.05, 0.3, 25)
        s = line_set(x, 0.02 + 0.4 * x)
        fit, est = mm_regress(s, intercept=True, seed=1)
        assert fit.exact_fit
        assert fit.slope == pytest.approx(0.4, abs=1e-10)
        assert fit.intercept == pytest.approx(0.02, abs=1e-10)

    def test_agrees_with_wls_on_clean_data(self):
        rng = np.random.default_rng(149)
        for trial in range(5):
            x = rng.uniform(0.05, 0.3, size=25)
            y = 0.1 * x + rng.normal(0, 0.05, size=25)
            s = line_set(x, y)
            fit, est = mm_regress(s, seed=trial)
            ref = ivw(s)
            assert est.se_reported
            combined = math.hypot(est.se, ref.se)
            assert abs(est.theta - ref.theta) < 2.0 * combined

    def test_egger_variant_agrees_on_clean_data(self):
        rng = np.random.default_rng(151)
        x = rng.uniform(0.05, 0.3, size=25)
        y = 0.01 + 0.2 * x + rng.normal(0, 0.05, size=25)
        s = line_set(x, y)
        fit, est = mm_regress(s, intercept=True, seed=9)
        ref = egger(s)
        assert est.method == "robust_egger"
        assert abs(est.theta - ref.theta) < 2.0 * math.hypot(est.se, ref.se)
        assert abs(est.intercept - ref.intercept) < 2.0 * math.hypot(
            est.intercept_se, ref.intercept_se
        )
        assert est.df == 23

    def test_single_outlier_bounded_influence(self):
        rng = np.random.default_rng(157)
        x = rng.uniform(0.05, 0.3, size=21)
        y = 0.1 * x + rng.normal(0, 0.05, size=21)
        s_clean = line_set(x, y)
        y_out = y.copy()
        y_out[3] += 50 * 0.05
        s_out = line_set(x, y_out)
        mm_clean = mm_regress(s_clean, seed=3)[1].theta
        mm_out = mm_regress(s_out, seed=3)[1].theta
        wls_clean = ivw(s_clean).theta
        wls_out = ivw(s_out).theta
        assert abs(mm_out - mm_clean) < 0.1 * abs(wls_out - wls_clean)

    def test_breakdown_under_gross_contamination(self):
        # 7 of 25 responses grossly corrupted: the robust fit stays near the
        # truth on average while remaining finite in every trial
        rng = np.random.default_rng(163)
        theta = 0.1
        err_clean = []
        err_bad = []
        for trial in range(100):
            x = rng.uniform(0.05, 0.3, size=25)
            y = theta * x + rng.normal(0, 0.05, size=25)
            s_clean = line_set(x, y)
            y_bad = y.copy()
            idx = rng.choice(25, size=7, replace=False)
            y_bad[idx] = rng.uniform(5.0, 50.0, size=7) * rng.choice([-1, 1], size=7)
            s_bad = line_set(x, y_bad)
            err_clean.append(mm_regress(s_clean, seed=trial)[1].theta - theta)
            err_bad.append(mm_regress(s_bad, seed=trial)[1].theta - theta)
        rms_clean = float(np.sqrt(np.mean(np.square(err_clean))))
        rms_bad = float(np.sqrt(np.mean(np.square(err_bad))))
        assert rms_bad <= 5.0 * rms_clean

    def test_deterministic_for_seed(self):
        rng = np.random.default_rng(167)
        x = rng.uniform(0.05, 0.3, size=15)
        y = 0.1 * x + rng.normal(0, 0.05, size=15)
        s = line_set(x, y)
        a_fit, a_est = mm_regress(s, intercept=True, seed=11)
        b_fit, b_est = mm_regress(s, intercept=True, seed=11)
        assert a_fit == b_fit
        assert a_est == b_est

    def test_affine_equivariance(self):
        rng = np.random.default_rng(173)
        x = rng.uniform(0.05, 0.3, size=20)
        y = 0.1 * x + rng.normal(0, 0.05, size=20)
        base, _ = mm_regress(line_set(x, y), seed=7)
        k = 3.0
        # scaling the outcome and its SE together leaves the standardized
        # residuals (and so the M-scale) unchanged while the slope scales
        scaled, _ = mm_regress(line_set(x, k * y, se_y=0.05 * k), seed=7)
        assert scaled.slope == pytest.approx(k * base.slope, rel=1e-9)
        assert scaled.scale == pytest.approx(base.scale, rel=1e-8)
        # scaling the outcome alone scales both slope and M-scale
        raw_scaled, _ = mm_regress(line_set(x, k * y), seed=7)
        assert raw_scaled.slope == pytest.approx(k * base.slope, rel=1e-9)
        assert raw_scaled.scale == pytest.approx(k * base.scale, rel=1e-8)
        shifted, _ = mm_regress(line_set(x, y + 0.25 * x), seed=7)
        assert shifted.slope == pytest.approx(base.slope + 0.25, rel=1e-9)

    def test_psi_stationarity_at_solution(self):
        rng = np.random.default_rng(179)
        x = rng.uniform(0.05, 0.3, size=25)
        y = 0.1 * x + rng.normal(0, 0.05, size=25)
        se_y = np.full(25, 0.05)
        s = make_set(x, np.full(25, 0.01), y, se_y, harmonized=True)
        fit, est = mm_regress(s, intercept=True, seed=13)
        assert fit.converged
        w = se_y**-2.0
        sqw = np.sqrt(w)
        design = np.column_stack([sqw, sqw * x])
        resid = sqw * y - design @ np.array([fit.intercept, fit.slope])
        score = psi_bisquare(resid / fit.scale, 4.685) @ design
        assert np.all(np.abs(score) < 1e-6 * 25)

    def test_validation_errors(self):
        x = np.array([0.1, 0.2])
        s = line_set(x, 0.1 * x)
        with pytest.raises(InsufficientInstrumentsError):
            mm_regress(s, intercept=True)
        one = line_set(np.array([0.1]), np.array([0.01]))
        with pytest.raises(InsufficientInstrumentsError):
            mm_regress(one)
        zeros = make_set([0.0, 0.0, 0.0], [0.01] * 3, [0.01, 0.0, 0.02], [0.05] * 3,
                         harmonized=True)
        with pytest.raises(DegenerateInstrumentError):
            mm_regress(zeros)
        with pytest.raises(ValueError):
            mm_regress(line_set(np.array([0.1, 0.2, 0.3]), np.zeros(3)), n_candidates=0)

    def test_converges_and_reports_iterations(self):
        rng = np.random.default_rng(181)
        x = rng.uniform(0.05, 0.3, size=25)
        y = 0.1 * x + rng.normal(0, 0.05, size=25)
        fit, est = mm_regress(line_set(x, y), seed=2)
        assert fit.converged
        assert 1 <= fit.iterations <= 500
        assert est.se_reported
        assert est.residual_scale == pytest.approx(
            fit.scale / _normal_consistency(1.548, 0.5), rel=1e-12
        )
