"""Registry running any subset of the estimator family on one summary set.

Method identifiers:

====================================  ==============================================
ivw, egger                            weighted LS, without / with intercept
robust_ivw, robust_egger              MM-regression counterparts
penalized_ivw, penalized_egger        weighted LS on heterogeneity-penalized weights
penalized_robust_ivw, ..._egger       MM-regression on the same penalized weights
simple_median                         equal-weight median of ratio estimates
weighted_median                       inverse-variance weighted median
penalized_weighted_median             weighted median on penalized weights
====================================  ==============================================

Penalty factors for the regression methods come from the unpenalized IVW and
intercept-model reference fits; the robust penalized variants reuse exactly
those weights. Results are keyed by method id in request order.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from ._util import as_seed_sequence
from .median_methods import (
    penalized_weighted_median,
    simple_median,
    weighted_median_estimate,
)
from .penalization import cochran_q_egger, cochran_q_ivw, penalize_weights
from .robust_mm import BisquareParams, mm_regress
from .summary_data import SummarySet, harmonize
from .wls import Estimate, egger, inverse_variance_weights, ivw

ALL_METHODS = (
    "ivw",
    "egger",
    "robust_ivw",
    "robust_egger",
    "penalized_ivw",
    "penalized_egger",
    "penalized_robust_ivw",
    "penalized_robust_egger",
    "simple_median",
    "weighted_median",
    "penalized_weighted_median",
)

# fixed per-method random streams so a subset request never reshuffles seeds
_STREAMS = {
    "robust_ivw": 0,
    "robust_egger": 1,
    "penalized_robust_ivw": 2,
    "penalized_robust_egger": 3,
    "simple_median": 4,
    "weighted_median": 5,
    "penalized_weighted_median": 6,
}


def _stream(root: np.random.SeedSequence, name: str) -> np.random.SeedSequence:
    # stateless child derivation: spawn_key extended by the method's index,
    # so repeated calls with the same root always yield the same stream
    entropy = root.entropy if root.entropy is not None else 0
    return np.random.SeedSequence(
        entropy=entropy, spawn_key=tuple(root.spawn_key) + (_STREAMS[name],)
    )


def run_methods(s: SummarySet, methods=ALL_METHODS, *,
                effects: str = "multiplicative_random",
                bootstrap_draws: int = 1000, seed=None,
                params: BisquareParams | None = None) -> dict[str, Estimate]:
    """Run the requested estimators on one summary set.

    The set is harmonized once up front (a no-op when already harmonized);
    every estimator sees the same orientation. ``seed`` feeds fixed-index
    substreams per stochastic method, so results for a method do not depend
    on which other methods were requested.
    """
    methods = tuple(methods)
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ValueError(f"unknown method id(s): {', '.join(unknown)}")
    if len(set(methods)) != len(methods):
        raise ValueError("duplicate method ids requested")
    hs = s if s.harmonized else harmonize(s)
    base_w = inverse_variance_weights(hs)
    root = as_seed_sequence(seed)
    need = set(methods)

    ivw_ref = None
    if need & {"ivw", "penalized_ivw", "penalized_robust_ivw"}:
        ivw_ref = ivw(hs, base_w, effects=effects)
    egger_ref = None
    if need & {"egger", "penalized_egger", "penalized_robust_egger"}:
        egger_ref = egger(hs, base_w)
    pen_w_ivw = None
    if need & {"penalized_ivw", "penalized_robust_ivw"}:
        report = cochran_q_ivw(hs, ivw_ref.theta)
        pen_w_ivw = penalize_weights(base_w, report)
    pen_w_egger = None
    if need & {"penalized_egger", "penalized_robust_egger"}:
        report = cochran_q_egger(hs, egger_ref.intercept, egger_ref.theta)
        pen_w_egger = penalize_weights(base_w, report)

    results: dict[str, Estimate] = {}
    for name in methods:
        if name == "ivw":
            results[name] = ivw_ref
        elif name == "egger":
            results[name] = egger_ref
        elif name == "robust_ivw":
            _, est = mm_regress(hs, base_w, intercept=False, params=params,
                                seed=_stream(root, name), effects=effects,
                                method=name)
            results[name] = est
        elif name == "robust_egger":
            _, est = mm_regress(hs, base_w, intercept=True, params=params,
                                seed=_stream(root, name), method=name)
            results[name] = est
        elif name == "penalized_ivw":
            est = ivw(hs, pen_w_ivw, effects=effects)
            results[name] = _relabel(est, name)
        elif name == "penalized_egger":
            est = egger(hs, pen_w_egger)
            results[name] = _relabel(est, name)
        elif name == "penalized_robust_ivw":
            _, est = mm_regress(hs, pen_w_ivw, intercept=False, params=params,
                                seed=_stream(root, name), effects=effects,
                                method=name)
            results[name] = est
        elif name == "penalized_robust_egger":
            _, est = mm_regress(hs, pen_w_egger, intercept=True, params=params,
                                seed=_stream(root, name), method=name)
            results[name] = est
        elif name == "simple_median":
            results[name] = simple_median(hs, draws=bootstrap_draws,
                                          seed=_stream(root, name))
        elif name == "weighted_median":
            results[name] = weighted_median_estimate(hs, draws=bootstrap_draws,
                                                     seed=_stream(root, name))
        else:
            results[name] = penalized_weighted_median(hs, draws=bootstrap_draws,
                                                      seed=_stream(root, name))
    return results


def _relabel(est: Estimate, name: str) -> Estimate:
    return dataclasses.replace(est, method=name)
