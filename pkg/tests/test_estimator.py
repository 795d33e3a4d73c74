"""Estimator front door: params, validation, batch transform, pipeline."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline

from slowmanifold.derivatives import DerivativeMode
from slowmanifold.estimator import SlowManifoldProjector
from slowmanifold.exceptions import SlowManifoldError
from slowmanifold.projector import IterationConfig, project
from slowmanifold.systems import linear_test, michaelis_menten

EPS = 0.01


class TestParams:
    def test_get_set_roundtrip(self, linear_sys):
        est = SlowManifoldProjector(system=linear_sys, m=2, h_over_eps=0.5)
        params = est.get_params()
        assert params["m"] == 2
        assert params["h_over_eps"] == 0.5
        est.set_params(m=1, tol=1e-9)
        assert est.m == 1 and est.tol == 1e-9

    def test_clone_keeps_settings(self, linear_sys):
        est = SlowManifoldProjector(system=linear_sys, m=1, use_rpm=True,
                                    rpm_delta=0.3)
        twin = clone(est)
        assert twin.m == 1 and twin.use_rpm and twin.rpm_delta == 0.3
        assert twin.system.epsilon == linear_sys.epsilon
        assert twin.system.label == linear_sys.label

    def test_system_required(self):
        est = SlowManifoldProjector()
        with pytest.raises(ValueError, match="FastSlowSystem"):
            est.fit([[1.0]])

    def test_differenced_needs_spacing(self, linear_sys):
        est = SlowManifoldProjector(system=linear_sys,
                                    variant="forward-difference")
        with pytest.raises(ValueError, match="h_hat_over_eps"):
            est.fit([[1.0]])


class TestFitTransform:
    def test_matches_direct_projection(self, mm_sys):
        est = SlowManifoldProjector(system=mm_sys, m=1, h_over_eps=0.4,
                                    tol=1e-10)
        X = np.array([[0.5], [1.0], [2.0]])
        got = est.fit_transform(X)
        cfg = IterationConfig(m=1, mode=DerivativeMode.analytic(0.4 * EPS),
                              tol=1e-10, seed_policy="critical-manifold")
        for row, out in zip(X, got):
            direct = project(mm_sys, None, cfg, row)
            assert_allclose(out, direct.output, atol=1e-14)

    def test_docstring_example_value(self, linear_sys):
        est = SlowManifoldProjector(system=linear_sys, m=1)
        got = est.fit_transform([[1.0]])
        assert got.shape == (1, 1)
        assert got.round(4)[0, 0] == pytest.approx(0.99)

    def test_fit_attributes(self, mm_sys):
        # H = 0.4*eps: the default step lands exactly on the |mu| = 1 boundary
        est = SlowManifoldProjector(system=mm_sys, m=0,
                                    h_over_eps=0.4).fit([[1.0]])
        assert est.n_features_in_ == 1
        assert len(est.spectrum_) == 1
        assert est.spectrum_[0].lambda_re == pytest.approx(-2.0, rel=1e-9)
        assert est.report_.stable

    def test_transform_before_fit(self, linear_sys):
        est = SlowManifoldProjector(system=linear_sys)
        with pytest.raises(NotFittedError):
            est.transform([[1.0]])

    def test_column_count_mismatch(self, linear_sys):
        est = SlowManifoldProjector(system=linear_sys)
        with pytest.raises(ValueError, match="slow variables"):
            est.fit([[1.0, 2.0]])
        est.fit([[1.0]])
        with pytest.raises(ValueError, match="features"):
            est.transform([[1.0, 2.0]])

    def test_rejects_non_finite_rows(self, linear_sys):
        est = SlowManifoldProjector(system=linear_sys).fit([[1.0]])
        with pytest.raises(ValueError):
            est.transform([[np.nan]])

    def test_divergent_configuration_raises(self, linear_sys):
        est = SlowManifoldProjector(system=linear_sys, m=1, h_over_eps=2.2)
        est.fit([[1.0]])
        assert not est.report_.stable
        with pytest.raises(SlowManifoldError, match="diverged"):
            est.transform([[1.0]])

    def test_budget_exhaustion_raises(self, linear_sys):
        est = SlowManifoldProjector(system=linear_sys, m=1, h_over_eps=0.01,
                                    tol=1e-12, max_iters=5)
        est.fit([[1.0]])
        with pytest.raises(SlowManifoldError, match="did not converge"):
            est.transform([[1.0]])

    def test_rpm_rescues_unstable_step(self, pair_factory):
        # drift != 0 keeps the critical-manifold seed off the fixed point
        sys = pair_factory(0.7, drift=0.5)
        plain = SlowManifoldProjector(system=sys, m=1).fit([[1.0]])
        with pytest.raises(SlowManifoldError):
            plain.transform([[1.0]])
        rescued = SlowManifoldProjector(system=sys, m=1, use_rpm=True,
                                        tol=1e-10).fit([[1.0]])
        with pytest.warns(UserWarning, match="pure Newton"):
            got = rescued.transform([[1.0]])
        assert_allclose(got[0], sys.oracle.h_iterate(1, [1.0]), atol=1e-8)

    def test_in_pipeline(self, linear_sys):
        pipe = Pipeline([
            ("manifold", SlowManifoldProjector(system=linear_sys, m=2,
                                               h_over_eps=0.5, tol=1e-10)),
        ])
        got = pipe.fit_transform(np.array([[1.0], [3.0]]))
        expected = np.concatenate(
            [linear_sys.oracle.h_iterate(2, [x]) for x in (1.0, 3.0)])
        assert_allclose(got[:, 0], expected, atol=1e-8)

    def test_project_trace_exposes_record(self, linear_sys):
        est = SlowManifoldProjector(system=linear_sys, m=0, tol=1e-10)
        trace = est.project_trace([1.0])
        assert trace.converged
        assert trace.iterations_used >= 1
