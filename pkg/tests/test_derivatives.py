"""Correction terms: exact matrix-power path, nested differences, stencils.

The linear path is compared against an independently coded matrix-power
formula; the nested-difference path is compared against the linear path
on the same system with the matrix stripped, so the two evaluation
routes check each other.
"""

import dataclasses
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from slowmanifold.derivatives import (M_MAX, DerivativeMode, L_hat, L_m,
                                      delta_forward, difference_weights,
                                      leading_order_check)
from slowmanifold.systems import (FastSlowSystem, FlowMap, linear_test,
                                  michaelis_menten)

EPS = 0.01


class TestDerivativeMode:
    def test_analytic_rejects_node_spacing(self):
        with pytest.raises(ValueError, match="forward-difference"):
            DerivativeMode(variant="analytic-recursive", H=EPS, H_hat=EPS)

    def test_differenced_requires_node_spacing(self):
        with pytest.raises(ValueError, match="H_hat"):
            DerivativeMode(variant="forward-difference", H=EPS)

    def test_eta_undefined_for_analytic(self):
        with pytest.raises(ValueError, match="eta"):
            DerivativeMode.analytic(EPS).eta

    def test_step_from_eta(self):
        mode = DerivativeMode.differenced(2.0, eta=0.5)
        assert mode.H == 1.0
        assert mode.eta == 0.5

    def test_positive_steps(self):
        with pytest.raises(ValueError):
            DerivativeMode.analytic(-EPS)
        with pytest.raises(ValueError):
            DerivativeMode.differenced(0.0)
        with pytest.raises(ValueError):
            DerivativeMode.differenced(EPS, eta=-1.0)

    def test_unknown_variant(self):
        with pytest.raises(ValueError, match="variant"):
            DerivativeMode(variant="spectral", H=EPS)


class TestAnalyticCorrection:
    def test_matrix_power_formula(self, linear_sys):
        # independent route: (-H)^(m+1) A_f A^m z
        A = linear_sys.linear_matrix
        z = np.array([1.3, -0.4])
        for H in (EPS, 0.3 * EPS, 2.0 * EPS):
            mode = DerivativeMode.analytic(H)
            for m in range(M_MAX + 1):
                expected = ((-H) ** (m + 1)
                            * A[1:, :] @ np.linalg.matrix_power(A, m) @ z)
                assert_allclose(L_m(linear_sys, mode, m, z), expected,
                                rtol=1e-12)

    def test_step_doubling_is_exact(self, linear_sys):
        # every factor of H is a scalar multiply, so doubling H scales
        # the result by exactly 2^(m+1), bit for bit
        z = np.array([0.7, 2.0])
        for m in range(M_MAX + 1):
            small = L_m(linear_sys, DerivativeMode.analytic(EPS), m, z)
            big = L_m(linear_sys, DerivativeMode.analytic(2.0 * EPS), m, z)
            assert np.array_equal(big, 2.0 ** (m + 1) * small)

    def test_nested_differences_match_linear_path(self, linear_sys):
        nonlinear = dataclasses.replace(linear_sys, linear_matrix=None)
        mode = DerivativeMode.analytic(EPS)
        z = np.array([1.3, -0.4])
        # noise grows with nesting depth; m = 3 is unusable and excluded
        for m, rtol in ((0, 0.0), (1, 1e-10), (2, 2e-5)):
            exact = L_m(linear_sys, mode, m, z)
            fd = L_m(nonlinear, mode, m, z)
            assert_allclose(fd, exact, rtol=rtol)

    def test_full_equilibrium_gives_zero(self, linear_sys):
        nonlinear = dataclasses.replace(linear_sys, linear_matrix=None)
        mode = DerivativeMode.analytic(EPS)
        out = L_m(nonlinear, mode, 2, np.zeros(2))
        assert np.array_equal(out, np.zeros(1))

    def test_rejects_differenced_mode(self, linear_sys):
        mode = DerivativeMode.differenced(EPS)
        with pytest.raises(ValueError, match="analytic-recursive"):
            L_m(linear_sys, mode, 0, np.array([1.0, 0.0]))

    def test_rejects_large_step(self, linear_sys):
        mode = DerivativeMode.analytic(11.0 * EPS)
        with pytest.raises(ValueError, match="forward-difference"):
            L_m(linear_sys, mode, 0, np.array([1.0, 0.0]))

    def test_rejects_bad_state_shape(self, linear_sys):
        mode = DerivativeMode.analytic(EPS)
        with pytest.raises(ValueError, match="length 2"):
            L_m(linear_sys, mode, 0, np.array([1.0, 0.0, 0.0]))

    def test_rejects_bad_order(self, linear_sys):
        mode = DerivativeMode.analytic(EPS)
        z = np.array([1.0, 0.0])
        with pytest.raises(ValueError):
            L_m(linear_sys, mode, M_MAX + 1, z)
        with pytest.raises(ValueError):
            L_m(linear_sys, mode, -1, z)
        with pytest.raises(ValueError):
            L_m(linear_sys, mode, 1.5, z)


class TestDifferenceWeights:
    @given(m=st.integers(min_value=0, max_value=M_MAX),
           coeffs=st.lists(st.floats(min_value=-5.0, max_value=5.0),
                           min_size=1, max_size=M_MAX + 1))
    @settings(max_examples=60, deadline=None)
    def test_annihilates_low_degree_polynomials(self, m, coeffs):
        # any polynomial of degree <= m in the node index is killed
        coeffs = coeffs[:m + 1]
        w = difference_weights(m)
        nodes = np.arange(m + 2, dtype=float)
        values = sum(c * nodes ** k for k, c in enumerate(coeffs))
        assert abs(np.dot(w, values)) < 1e-9

    def test_first_surviving_moment(self):
        # sum_l w_l l^(m+1) = (m+1)! pins the normalization
        for m in range(M_MAX + 1):
            w = difference_weights(m)
            nodes = np.arange(m + 2, dtype=float)
            assert np.dot(w, nodes ** (m + 1)) == math.factorial(m + 1)

    def test_integer_binomial_values(self):
        assert_allclose(difference_weights(0), [-1.0, 1.0], rtol=0)
        assert_allclose(difference_weights(1), [1.0, -2.0, 1.0], rtol=0)
        assert_allclose(difference_weights(2), [-1.0, 3.0, -3.0, 1.0], rtol=0)


class TestForwardDifference:
    def test_matches_matrix_exponential_nodes(self, linear_sys):
        # same stencil applied to exact expm nodes
        A = linear_sys.linear_matrix
        z = np.array([1.3, -0.4])
        h_hat = EPS
        fm = FlowMap(linear_sys, EPS / 128.0)
        mode = DerivativeMode.differenced(h_hat)
        for m in range(M_MAX + 1):
            w = difference_weights(m)
            oracle = sum(
                wl * (scipy.linalg.expm(A * (ell * h_hat)) @ z)[1:]
                for ell, wl in enumerate(w))
            assert_allclose(delta_forward(linear_sys, fm, mode, m, z),
                            oracle, atol=1e-9)

    def test_stationary_trajectory_cancels(self):
        # f and g vanish at y = 1, every node coincides, and the integer
        # weights cancel a constant exactly
        sys = FastSlowSystem(
            n_slow=1, n_fast=1, epsilon=EPS,
            f_eval=lambda x, y, eps: np.zeros(1),
            g_eval=lambda x, y, eps: y - 1.0)
        fm = FlowMap(sys, EPS / 4.0)
        mode = DerivativeMode.differenced(5.0 * EPS)
        z = np.array([0.3, 1.0])
        for m in range(M_MAX + 1):
            assert np.array_equal(delta_forward(sys, fm, mode, m, z),
                                  np.zeros(1))

    def test_rejects_analytic_mode(self, linear_sys):
        fm = FlowMap(linear_sys, EPS / 4.0)
        mode = DerivativeMode.analytic(EPS)
        with pytest.raises(ValueError, match="forward-difference"):
            delta_forward(linear_sys, fm, mode, 0, np.array([1.0, 0.0]))

    def test_correction_is_scaled_difference(self, linear_sys):
        fm = FlowMap(linear_sys, EPS / 16.0)
        z = np.array([1.3, -0.4])
        for eta in (0.5, 1.0, 1.8):
            mode = DerivativeMode.differenced(EPS, eta=eta)
            for m in range(M_MAX + 1):
                d = delta_forward(linear_sys, fm, mode, m, z)
                assert_allclose(L_hat(linear_sys, fm, mode, m, z),
                                (-eta) ** (m + 1) * d, rtol=1e-14)

    def test_first_order_in_node_spacing(self, linear_sys):
        # with eta fixed, L_hat approaches the analytic correction at the
        # matching step linearly in H_hat; halving should near-halve the
        # relative deviation
        z = np.array([1.3, -0.4])
        for m in range(3):
            rels = []
            for h_hat in (0.25 * EPS, 0.125 * EPS):
                mode = DerivativeMode.differenced(h_hat)
                fm = FlowMap(linear_sys, h_hat / 64.0)
                approx = L_hat(linear_sys, fm, mode, m, z)
                exact = L_m(linear_sys, DerivativeMode.analytic(mode.H), m, z)
                rels.append(np.linalg.norm(approx - exact)
                            / np.linalg.norm(exact))
            assert 1.5 < rels[0] / rels[1] < 2.5


class TestLeadingOrderCheck:
    def test_eps_free_fast_field_is_exact_at_order_zero(self):
        # g carries no explicit eps, so the m = 0 correction equals its
        # leading term identically
        mm = michaelis_menten(1.0, 1.0, EPS)
        z = np.array([1.0, 0.6])
        assert leading_order_check(mm, DerivativeMode.analytic(EPS), 0, z) == 0.0

    def test_deviation_shrinks_linearly_with_eps(self):
        x0 = np.array([1.0])
        for m in (1, 2):
            vals = []
            for eps in (0.01, 0.005):
                mm = michaelis_menten(1.0, 1.0, eps)
                z = np.concatenate([x0, mm.reference.evaluate(x0, 0.0) + 0.1])
                vals.append(leading_order_check(
                    mm, DerivativeMode.analytic(eps), m, z))
            assert vals[0] < 0.05
            assert 1.8 < vals[0] / vals[1] < 2.2

    def test_differenced_variant_refines_with_spacing(self, linear_sys):
        # the differenced check carries its own O(H_hat/eps) stencil
        # error, which should halve along with the spacing
        z = np.array([1.3, -0.4])
        vals = [leading_order_check(
                    linear_sys, DerivativeMode.differenced(h_hat), 1, z)
                for h_hat in (EPS / 8.0, EPS / 16.0, EPS / 32.0)]
        assert vals[0] < 0.2
        assert 1.7 < vals[0] / vals[1] < 2.2
        assert 1.7 < vals[1] / vals[2] < 2.2
