"""MM-regression for summarized data with bounded-influence loss.

The fit happens on weight-transformed observations (response beta_y * sqrt(w),
regressor beta_x * sqrt(w), intercept column sqrt(w)). A high-breakdown
S-stage searches random exact-fit candidates for the smallest M-scale of the
residuals under a bisquare loss tuned for 50% breakdown (c = 1.548); an
efficiency-tuned M-stage (c = 4.685) then iterates reweighted least squares
at that fixed scale. Slope uncertainty comes from the standard M-estimation
sandwich, post-processed the same way as the weighted least-squares fits
(multiplicative random effects).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._util import as_seed_sequence
from .distributions import normal_quantile, normal_sf, t_cdf, t_quantile
from .exceptions import (
    DegenerateInstrumentError,
    InsufficientInstrumentsError,
    SingularDesignError,
)
from .summary_data import SummarySet
from .wls import EFFECTS_MODELS, Estimate, WeightVector, _resolve_weights

N_CANDIDATES = 500
REFINE_STEPS = 2
M_STEP_TOL = 1e-10
M_STEP_MAX_ITER = 500
_SUBSET_RETRY_ROUNDS = 1000
_BISECT_STEPS = 64
_Z975 = normal_quantile(0.975)


@dataclass(frozen=True)
class BisquareParams:
    """Tuning constants for the bisquare loss.

    ``c_s`` drives the scale (S) stage, ``c_m`` the efficiency (M) stage;
    ``breakdown`` is the target right-hand side of the M-scale equation.
    """

    c_s: float = 1.548
    c_m: float = 4.685
    breakdown: float = 0.5

    def __post_init__(self):
        if not (self.c_s > 0.0 and self.c_m > 0.0):
            raise ValueError("tuning constants must be positive")
        if not 0.0 < self.breakdown < 1.0:
            raise ValueError(f"breakdown must lie in (0, 1), got {self.breakdown!r}")


@dataclass(frozen=True)
class RobustFit:
    """Solver-level outcome of an MM fit."""

    slope: float
    intercept: float | None
    scale: float
    converged: bool
    se_available: bool
    iterations: int
    exact_fit: bool = False


def rho_bisquare(r, c: float = 1.548):
    """Bisquare loss: (c^2/6) * (1 - (1 - (r/c)^2)^3), capped at c^2/6."""
    _check_tuning(c)
    r = np.asarray(r, dtype=float)
    u2 = np.minimum((r / c) ** 2, 1.0)
    out = (c * c / 6.0) * (1.0 - (1.0 - u2) ** 3)
    return out if out.ndim else float(out)


def psi_bisquare(r, c: float = 4.685):
    """Bisquare score r * (1 - (r/c)^2)^2, zero outside |r| <= c."""
    _check_tuning(c)
    r = np.asarray(r, dtype=float)
    u2 = (r / c) ** 2
    out = np.where(u2 < 1.0, r * (1.0 - u2) ** 2, 0.0)
    return out if out.ndim else float(out)


def weight_bisquare(r, c: float = 4.685):
    """IRLS weight psi(r)/r = (1 - (r/c)^2)^2, zero outside |r| <= c."""
    _check_tuning(c)
    r = np.asarray(r, dtype=float)
    u2 = (r / c) ** 2
    out = np.where(u2 < 1.0, (1.0 - u2) ** 2, 0.0)
    return out if out.ndim else float(out)


def _psi_prime_bisquare(r, c: float):
    # d/dr psi = (1 - u^2)(1 - 5 u^2) on the support, u = r/c
    r = np.asarray(r, dtype=float)
    u2 = (r / c) ** 2
    out = np.where(u2 < 1.0, (1.0 - u2) * (1.0 - 5.0 * u2), 0.0)
    return out if out.ndim else float(out)


def _check_tuning(c: float) -> None:
    if not c > 0.0:
        raise ValueError(f"tuning constant must be positive, got {c!r}")


def _rho_norm(u: np.ndarray, c: float) -> np.ndarray:
    # rho scaled to max 1: 1 - (1 - min(u^2/c^2, 1))^3
    u2 = np.minimum((u / c) ** 2, 1.0)
    return 1.0 - (1.0 - u2) ** 3


def _m_scale_batch(resid: np.ndarray, c: float, breakdown: float):
    """Row-wise M-scales; returns (scales, exact_fit flags)."""
    a = np.abs(resid)
    n = a.shape[1]
    nonzero = np.count_nonzero(a, axis=1)
    exact = nonzero < breakdown * n
    solve = ~exact
    min_nz = np.where(a > 0.0, a, np.inf).min(axis=1)
    lo = np.where(solve, min_nz / c, 1.0)
    hi = np.maximum(a.max(axis=1), lo)
    # every nonzero residual sits at or past c at s = lo, so the mean of the
    # scaled loss is >= breakdown there; expand hi until it drops below
    for _ in range(200):
        g_hi = _rho_norm(a / hi[:, None], c).mean(axis=1) - breakdown
        need = solve & (g_hi > 0.0)
        if not np.any(need):
            break
        hi = np.where(need, hi * 2.0, hi)
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        g_mid = _rho_norm(a / mid[:, None], c).mean(axis=1) - breakdown
        above = g_mid > 0.0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return np.where(exact, 0.0, 0.5 * (lo + hi)), exact


def m_scale(residuals, c: float = 1.548, breakdown: float = 0.5) -> tuple[float, bool]:
    """M-estimate of scale under the bisquare loss.

    Solves mean(rho(r_i / s, c)) / (c^2 / 6) = breakdown for s by monotone
    bracketing and bisection. When strictly more than ``1 - breakdown`` of
    the residuals are exactly zero the equation has no positive root; the
    scale is then 0 with the second return value flagging the exact fit.
    """
    _check_tuning(c)
    if not 0.0 < breakdown < 1.0:
        raise ValueError(f"breakdown must lie in (0, 1), got {breakdown!r}")
    r = np.asarray(residuals, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("residuals must form a non-empty 1-d vector")
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals must be finite")
    scales, exact = _m_scale_batch(r[None, :], c, breakdown)
    return float(scales[0]), bool(exact[0])


@lru_cache(maxsize=None)
def _normal_consistency(c: float, breakdown: float) -> float:
    # kappa with E[rho_norm(Z / kappa, c)] = breakdown under Z ~ N(0, 1);
    # dividing an M-scale of N(0, sigma^2) residuals by kappa recovers sigma.
    nodes, weights = np.polynomial.legendre.leggauss(128)

    def expectation(kappa: float) -> float:
        half = 0.5 * c * kappa
        z = half * (nodes + 1.0)
        dens = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        inner = 2.0 * half * float(np.sum(weights * dens * _rho_norm(z / kappa, c)))
        return inner + 2.0 * normal_sf(c * kappa)

    lo, hi = 1e-3, 1e3
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expectation(mid) > breakdown:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _design(s: SummarySet, w: np.ndarray, intercept: bool):
    sqw = np.sqrt(w)
    cols = [sqw, sqw * s.beta_x] if intercept else [sqw * s.beta_x]
    return np.column_stack(cols), sqw * s.beta_y


def _candidate_residuals(design: np.ndarray, response: np.ndarray, coefs: np.ndarray):
    return response[None, :] - coefs @ design.T


def _weighted_solve_rows(design: np.ndarray, response: np.ndarray,
                         irls_w: np.ndarray, coefs: np.ndarray) -> np.ndarray:
    """One weighted LS step per candidate row; singular rows keep old coefs."""
    p = design.shape[1]
    if p == 1:
        x = design[:, 0]
        den = irls_w @ (x * x)
        num = irls_w @ (x * response)
        ok = (den > 0.0) & np.isfinite(den) & np.isfinite(num)
        out = coefs.copy()
        out[ok, 0] = num[ok] / den[ok]
        return out
    x0 = design[:, 0]
    x1 = design[:, 1]
    s00 = irls_w @ (x0 * x0)
    s01 = irls_w @ (x0 * x1)
    s11 = irls_w @ (x1 * x1)
    r0 = irls_w @ (x0 * response)
    r1 = irls_w @ (x1 * response)
    det = s00 * s11 - s01 * s01
    ok = (det > 1e-12 * np.maximum(s00 * s11, 1e-300)) & np.isfinite(det)
    out = coefs.copy()
    out[ok, 0] = (s11[ok] * r0[ok] - s01[ok] * r1[ok]) / det[ok]
    out[ok, 1] = (s00[ok] * r1[ok] - s01[ok] * r0[ok]) / det[ok]
    return out


def _s_stage(s: SummarySet, design, response, params: BisquareParams, rng,
             n_candidates: int, refine_steps: int):
    """Random-subset search for the smallest M-scale; first minimum wins."""
    j = s.j
    p = design.shape[1]
    x = s.beta_x
    y = s.beta_y
    idx = rng.integers(0, j, size=(n_candidates, p))
    for _ in range(_SUBSET_RETRY_ROUNDS):
        if p == 1:
            bad = design[idx[:, 0], 0] == 0.0
        else:
            sq0 = design[idx[:, 0], 0]
            sq1 = design[idx[:, 1], 0]
            bad = (idx[:, 0] == idx[:, 1]) | (sq0 == 0.0) | (sq1 == 0.0) \
                | (x[idx[:, 0]] == x[idx[:, 1]])
        if not np.any(bad):
            break
        idx[bad] = rng.integers(0, j, size=(int(np.sum(bad)), p))
    else:
        raise SingularDesignError(
            "no non-singular random subsets found; exposure associations are too degenerate"
        )
    if p == 1:
        coefs = (y[idx[:, 0]] / x[idx[:, 0]])[:, None]
    else:
        slope = (y[idx[:, 1]] - y[idx[:, 0]]) / (x[idx[:, 1]] - x[idx[:, 0]])
        inter = y[idx[:, 0]] - slope * x[idx[:, 0]]
        coefs = np.column_stack([inter, slope])
    resid = _candidate_residuals(design, response, coefs)
    # candidates interpolate their own subset points; zero those residuals
    # explicitly so rounding dust cannot mask an exact fit
    resid[np.arange(idx.shape[0])[:, None], idx] = 0.0
    scales, exact = _m_scale_batch(resid, params.c_s, params.breakdown)
    for _ in range(refine_steps):
        active = ~exact
        if not np.any(active):
            break
        safe = np.where(scales > 0.0, scales, 1.0)
        irls_w = weight_bisquare(resid / safe[:, None], params.c_s)
        irls_w[exact] = 0.0
        updated = _weighted_solve_rows(design, response, irls_w, coefs)
        coefs = np.where(active[:, None], updated, coefs)
        resid = _candidate_residuals(design, response, coefs)
        new_scales, new_exact = _m_scale_batch(resid, params.c_s, params.breakdown)
        scales = np.where(active, new_scales, scales)
        exact = exact | new_exact
        scales = np.where(exact, 0.0, scales)
    best = int(np.argmin(scales))
    return coefs[best].copy(), float(scales[best]), bool(exact[best])


def mm_regress(s: SummarySet, weights: WeightVector | None = None,
               intercept: bool = False, params: BisquareParams | None = None,
               seed=None, effects: str = "multiplicative_random",
               n_candidates: int = N_CANDIDATES, refine_steps: int = REFINE_STEPS,
               tol: float = M_STEP_TOL, max_iter: int = M_STEP_MAX_ITER,
               method: str | None = None) -> tuple[RobustFit, Estimate]:
    """Bounded-influence regression of outcome on exposure associations.

    Parameters
    ----------
    s : SummarySet
        Variant associations. With ``intercept`` the set should be
        harmonized for the intercept to be interpretable.
    weights : WeightVector, optional
        Analysis weights, inverse-variance by default; applied by scaling
        each observation by sqrt(w).
    intercept : bool
        Fit a free intercept (needs J >= 3; J >= 2 without).
    params : BisquareParams
        Loss tuning; defaults to 50% breakdown scale loss and the
        95%-efficiency M loss.
    seed : int, SeedSequence, optional
        Drives the random subset search; identical seeds give bit-identical
        fits regardless of thread count.
    effects : {"fixed", "multiplicative_random"}
        Standard-error post-processing, matching the least-squares fits.
    n_candidates, refine_steps, tol, max_iter : int, int, float, int
        Search width of the S-stage, IRLS refinement steps per candidate,
        relative coefficient tolerance and iteration cap of the M-stage.
    method : str, optional
        Label recorded on the returned Estimate.

    Returns
    -------
    (RobustFit, Estimate)
        Solver outcome and the inference-level summary. A singular sandwich
        leaves ``se_available`` False (the estimate is still returned).
    """
    params = params or BisquareParams()
    if effects not in EFFECTS_MODELS:
        raise ValueError(f"effects must be one of {EFFECTS_MODELS}, got {effects!r}")
    if n_candidates < 1 or refine_steps < 0 or max_iter < 1 or not tol > 0.0:
        raise ValueError("n_candidates/max_iter must be >= 1, refine_steps >= 0, tol > 0")
    minimum = 3 if intercept else 2
    if s.j < minimum:
        raise InsufficientInstrumentsError(
            f"mm_regress needs at least {minimum} variants "
            f"{'with' if intercept else 'without'} an intercept, got {s.j}"
        )
    w = _resolve_weights(s, weights)
    x = s.beta_x
    if intercept:
        sw = float(np.sum(w))
        sx = float(np.sum(w * x))
        sxx = float(np.sum(w * x * x))
        if sw <= 0.0 or sw * sxx - sx * sx <= 1e-12 * sw * sxx:
            raise SingularDesignError(
                "exposure associations are identical under the positive weights"
            )
    elif float(np.sum(w * x * x)) <= 0.0:
        raise DegenerateInstrumentError(
            "every positively weighted exposure association is zero"
        )
    label = method or ("robust_egger" if intercept else "robust_ivw")
    design, response = _design(s, w, intercept)
    rng = np.random.Generator(np.random.Philox(as_seed_sequence(seed)))
    beta, s_star, exact = _s_stage(s, design, response, params, rng,
                                   n_candidates, refine_steps)
    if exact or s_star == 0.0:
        fit = RobustFit(
            slope=float(beta[-1]),
            intercept=float(beta[0]) if intercept else None,
            scale=0.0,
            converged=True,
            se_available=False,
            iterations=0,
            exact_fit=True,
        )
        return fit, _robust_estimate(fit, label, effects, s.j, sigma=0.0)

    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        resid = response - design @ beta
        irls_w = weight_bisquare(resid / s_star, params.c_m)
        a_mat = (design * irls_w[:, None]).T @ design
        rhs = design.T @ (irls_w * response)
        try:
            beta_new = np.linalg.solve(a_mat, rhs)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(beta_new)):
            break
        delta = float(np.max(np.abs(beta_new - beta)))
        beta = beta_new
        if delta <= tol * max(1.0, float(np.max(np.abs(beta)))):
            converged = True
            break

    u = (response - design @ beta) / s_star
    psi = psi_bisquare(u, params.c_m)
    dpsi = _psi_prime_bisquare(u, params.c_m)
    bread = (design * dpsi[:, None]).T @ design
    meat = (design * (psi * psi)[:, None]).T @ design
    se_available = True
    var_slope = var_int = math.nan
    if np.all(np.isfinite(bread)) and np.linalg.cond(bread) < 1e12:
        bread_inv = np.linalg.inv(bread)
        cov = (s_star ** 2) * bread_inv @ meat @ bread_inv
        var_slope = float(cov[-1, -1])
        if intercept:
            var_int = float(cov[0, 0])
        if not (var_slope > 0.0 and math.isfinite(var_slope)):
            se_available = False
        elif intercept and not (var_int > 0.0 and math.isfinite(var_int)):
            se_available = False
    else:
        se_available = False

    sigma = s_star / _normal_consistency(params.c_s, params.breakdown)
    fit = RobustFit(
        slope=float(beta[-1]),
        intercept=float(beta[0]) if intercept else None,
        scale=s_star,
        converged=converged,
        se_available=se_available,
        iterations=iterations,
    )
    return fit, _robust_estimate(
        fit, label, effects, s.j, sigma=sigma,
        se_slope_raw=math.sqrt(var_slope) if se_available else None,
        se_int_raw=math.sqrt(var_int) if se_available and intercept else None,
    )


def _robust_estimate(fit: RobustFit, label: str, effects: str, j: int,
                     sigma: float, se_slope_raw: float | None = None,
                     se_int_raw: float | None = None) -> Estimate:
    if not fit.se_available or se_slope_raw is None:
        return Estimate(
            method=label,
            theta=fit.slope,
            se_reported=False,
            effects_model=effects,
            intercept=fit.intercept,
            residual_scale=sigma,
            warnings=("standard error unavailable",)
            + (("exact fit",) if fit.exact_fit else ()),
        )
    correction = sigma if effects == "fixed" else min(sigma, 1.0)
    se = se_slope_raw / correction
    if fit.intercept is None:
        ci_low = fit.slope - _Z975 * se
        ci_high = fit.slope + _Z975 * se
        p_value = 2.0 * normal_sf(abs(fit.slope) / se)
        df = None
        intercept_se = intercept_p = None
    else:
        df = j - 2
        q975 = t_quantile(0.975, df)
        ci_low = fit.slope - q975 * se
        ci_high = fit.slope + q975 * se
        p_value = 2.0 * (1.0 - t_cdf(abs(fit.slope) / se, df))
        intercept_se = se_int_raw / correction
        intercept_p = 2.0 * (1.0 - t_cdf(abs(fit.intercept) / intercept_se, df))
    return Estimate(
        method=label,
        theta=fit.slope,
        se=se,
        ci_low=ci_low,
        ci_high=ci_high,
        p_value=p_value,
        effects_model=effects,
        df=df,
        intercept=fit.intercept,
        intercept_se=intercept_se,
        intercept_p=intercept_p,
        residual_scale=sigma,
        warnings=() if fit.converged else ("M-step did not converge",),
    )
