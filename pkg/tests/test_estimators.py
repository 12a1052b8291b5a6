"""The method registry: id validation, seed isolation, and penalized wiring."""
from __future__ import annotations

import numpy as np
import pytest

from ivrobust.estimators import ALL_METHODS, run_methods
from ivrobust.penalization import cochran_q_egger, cochran_q_ivw, penalize_weights
from ivrobust.summary_data import harmonize
from ivrobust.wls import egger, inverse_variance_weights, ivw

from _helpers import make_set


@pytest.fixture(scope="module")
def summary():
    rng = np.random.default_rng(191)
    j = 12
    beta_x = rng.uniform(0.05, 0.3, size=j) * rng.choice([-1.0, 1.0], size=j)
    beta_y = 0.1 * beta_x + rng.normal(0, 0.05, size=j)
    return make_set(
        beta_x, rng.uniform(0.005, 0.02, size=j), beta_y, np.full(j, 0.05)
    )


class TestRegistry:
    def test_all_methods_run(self, summary):
        results = run_methods(summary, seed=5, bootstrap_draws=200)
        assert tuple(results) == ALL_METHODS
        for name, est in results.items():
            assert est.method == name
            assert np.isfinite(est.theta)

    def test_unknown_method_rejected(self, summary):
        with pytest.raises(ValueError, match="unknown method"):
            run_methods(summary, ("ivw", "mode"), seed=1)

    def test_duplicate_method_rejected(self, summary):
        with pytest.raises(ValueError, match="duplicate"):
            run_methods(summary, ("ivw", "ivw"), seed=1)

    def test_request_order_preserved(self, summary):
        order = ("weighted_median", "ivw", "robust_egger")
        assert tuple(run_methods(summary, order, seed=2, bootstrap_draws=100)) == order

    def test_deterministic_for_seed(self, summary):
        a = run_methods(summary, seed=7, bootstrap_draws=200)
        b = run_methods(summary, seed=7, bootstrap_draws=200)
        assert a == b

    def test_subset_leaves_method_results_unchanged(self, summary):
        # stochastic methods read fixed per-method streams, so dropping other
        # methods from the request cannot shift anyone's draws
        full = run_methods(summary, seed=11, bootstrap_draws=200)
        for subset in (
            ("robust_ivw",),
            ("penalized_weighted_median", "robust_egger"),
            ("simple_median", "ivw", "penalized_robust_egger"),
        ):
            got = run_methods(summary, subset, seed=11, bootstrap_draws=200)
            for name in subset:
                assert got[name] == full[name]

    def test_harmonization_is_idempotent_entry(self, summary):
        a = run_methods(summary, seed=3, bootstrap_draws=100)
        b = run_methods(harmonize(summary), seed=3, bootstrap_draws=100)
        assert a == b


class TestPenalizedWiring:
    def test_penalized_ivw_matches_manual_pipeline(self, summary):
        hs = harmonize(summary)
        results = run_methods(summary, ("penalized_ivw",), seed=1)
        base_w = inverse_variance_weights(hs)
        ref = ivw(hs, base_w)
        w = penalize_weights(base_w, cochran_q_ivw(hs, ref.theta))
        manual = ivw(hs, w)
        est = results["penalized_ivw"]
        assert est.method == "penalized_ivw"
        assert est.theta == manual.theta
        assert est.se == manual.se

    def test_penalized_egger_matches_manual_pipeline(self, summary):
        hs = harmonize(summary)
        results = run_methods(summary, ("penalized_egger",), seed=1)
        base_w = inverse_variance_weights(hs)
        ref = egger(hs, base_w)
        w = penalize_weights(base_w, cochran_q_egger(hs, ref.intercept, ref.theta))
        manual = egger(hs, w)
        est = results["penalized_egger"]
        assert est.theta == manual.theta
        assert est.intercept == manual.intercept

    def test_penalized_robust_reuses_reference_weights(self, summary):
        # the robust penalized fits take their weights from the standard
        # (non-robust) reference fits, not from a robust reference
        from ivrobust.robust_mm import mm_regress
        from ivrobust.estimators import _stream
        from ivrobust._util import as_seed_sequence

        hs = harmonize(summary)
        base_w = inverse_variance_weights(hs)
        w = penalize_weights(base_w, cochran_q_ivw(hs, ivw(hs, base_w).theta))
        root = as_seed_sequence(13)
        _, manual = mm_regress(hs, w, intercept=False,
                               seed=_stream(root, "penalized_robust_ivw"),
                               method="penalized_robust_ivw")
        got = run_methods(summary, ("penalized_robust_ivw",), seed=13)
        assert got["penalized_robust_ivw"] == manual
